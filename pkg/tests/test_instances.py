import math

import numpy as np
import pytest

from pvrp.errors import ConfigError, ParseError, ValidationError
from pvrp.instances import (FORBID, REQUIRE, GeneratorConfig, Instance,
                            _repair_rows, _sample_profile_entries,
                            derive_pvrplib, generate_uniform,
                            generate_zone_constrained, parse_cvrplib,
                            read_instance, write_instance)

CVRPLIB_TOY = """\
NAME : toy-k2
COMMENT : tiny fixture
TYPE : CVRP
DIMENSION : 3
EDGE_WEIGHT_TYPE : EUC_2D
CAPACITY : 100
NODE_COORD_SECTION
1 0 0
2 40 0
3 0 30
DEMAND_SECTION
1 0
2 5
3 7
DEPOT_SECTION
1
-1
EOF
"""


def test_generate_uniform_basic_fields():
    inst = generate_uniform(GeneratorConfig(n_clients=100, m_vehicles=7, seed=1))
    assert inst.n_clients == 100 and inst.n_vehicles == 7
    assert np.all(inst.capacities == 40)
    assert np.all(inst.speeds == 1.0)
    assert inst.demands.min() >= 1 and inst.demands.max() <= 9
    pts = inst.node_coords()
    assert pts.min() >= 0.0 and pts.max() <= 1.0


def test_generate_uniform_degenerate_single_pair():
    cfg = GeneratorConfig(n_clients=1, m_vehicles=1, forbid_rate_max=0.0,
                          require_rate_max=0.0, seed=0)
    inst = generate_uniform(cfg)
    p = inst.profiles[0, 0]
    assert math.isfinite(p) and 0.0 <= p <= 1.0


def test_generate_uniform_deterministic():
    cfg = GeneratorConfig(n_clients=25, m_vehicles=3, seed=42)
    a, b = generate_uniform(cfg), generate_uniform(cfg)
    assert a == b
    assert write_instance(a) == write_instance(b)


def test_generate_uniform_row_invariants_at_max_rates():
    # push the sentinel rates hard and check repair holds the line
    for seed in range(40):
        cfg = GeneratorConfig(n_clients=30, m_vehicles=2, seed=seed,
                              forbid_rate_max=0.45, require_rate_max=0.45)
        inst = generate_uniform(cfg)
        assert np.all(np.isposinf(inst.profiles).sum(axis=1) <= 1)
        assert np.all(~np.isneginf(inst.profiles).all(axis=1))


def test_sentinel_rates_within_three_sigma():
    # raw sampling stage, rates forced; 10^4 pairs
    rng = np.random.default_rng(123)
    qf, qr = 0.07, 0.05
    profiles = _sample_profile_entries(rng, 200, 50, qf, qr, 0.0, 1.0)
    n = profiles.size
    f_hat = np.isneginf(profiles).mean()
    r_hat = np.isposinf(profiles).mean()
    assert abs(f_hat - qf) <= 3 * math.sqrt(qf * (1 - qf) / n)
    assert abs(r_hat - qr) <= 3 * math.sqrt(qr * (1 - qr) / n)
    fin = profiles[np.isfinite(profiles)]
    assert fin.min() >= 0.0 and fin.max() <= 1.0


def test_repair_rows_demotes_and_unforbids():
    rng = np.random.default_rng(0)
    profiles = np.array([[REQUIRE, REQUIRE, 0.5],
                         [FORBID, FORBID, FORBID],
                         [0.2, FORBID, REQUIRE]])
    _repair_rows(rng, profiles, 0.0, 1.0)
    assert np.isposinf(profiles[0]).sum() == 1
    assert 1.0 in profiles[0]  # demoted entry becomes p_max
    assert np.isfinite(profiles[1]).any()
    assert list(profiles[2]) == [0.2, FORBID, REQUIRE]  # untouched


def test_generator_config_errors():
    with pytest.raises(ConfigError):
        generate_uniform(GeneratorConfig(n_clients=0))
    with pytest.raises(ConfigError):
        generate_uniform(GeneratorConfig(forbid_rate_max=0.6, require_rate_max=0.5))
    with pytest.raises(ConfigError):
        generate_uniform(GeneratorConfig(demand_range=(5, 3)))
    with pytest.raises(ConfigError):
        generate_uniform(GeneratorConfig(demand_range=(1, 50), capacity=40))
    with pytest.raises(ConfigError):
        generate_zone_constrained(GeneratorConfig(), 1.0)


def test_zone_rate_zero_has_no_forbids():
    inst = generate_zone_constrained(GeneratorConfig(n_clients=12, m_vehicles=3, seed=5), 0.0)
    assert not np.isneginf(inst.profiles).any()
    assert not np.isposinf(inst.profiles).any()


def test_zone_half_rate_masks_two_of_four():
    inst = generate_zone_constrained(GeneratorConfig(n_clients=40, m_vehicles=4, seed=9), 0.5)
    counts = np.isneginf(inst.profiles).sum(axis=1)
    assert np.all(counts == 2)  # floor(0.5 * 4) sectors masked per client


def test_zone_rows_keep_a_serviceable_vehicle():
    inst = generate_zone_constrained(GeneratorConfig(n_clients=100, m_vehicles=7, seed=3), 0.3)
    assert np.all(~np.isneginf(inst.profiles).all(axis=1))


def test_instance_validation_rejects_bad_rows():
    base = generate_uniform(GeneratorConfig(n_clients=3, m_vehicles=2, seed=0,
                                            forbid_rate_max=0, require_rate_max=0))
    bad = base.profiles.copy()
    bad[0] = [REQUIRE, REQUIRE]
    with pytest.raises(ValidationError):
        base.replace(profiles=bad)
    bad = base.profiles.copy()
    bad[1] = [FORBID, FORBID]
    with pytest.raises(ValidationError):
        base.replace(profiles=bad)
    with pytest.raises(ValidationError):
        base.replace(demands=np.array([100, 1, 1]))


def test_roundtrip_random_instances():
    for seed in range(50):
        cfg = GeneratorConfig(n_clients=1 + seed % 12, m_vehicles=1 + seed % 4,
                              seed=seed, forbid_rate_max=0.3, require_rate_max=0.3)
        inst = generate_uniform(cfg)
        again = read_instance(write_instance(inst))
        assert again == inst
        # bit-exact text fixpoint too
        assert write_instance(again) == write_instance(inst)


def test_roundtrip_preserves_sentinel_tokens():
    inst = generate_uniform(GeneratorConfig(n_clients=4, m_vehicles=2, seed=7,
                                            forbid_rate_max=0, require_rate_max=0))
    profiles = inst.profiles.copy()
    profiles[0, 0] = FORBID
    profiles[1, 1] = REQUIRE
    inst = inst.replace(profiles=profiles)
    text = write_instance(inst)
    assert "-INF" in text and "+INF" in text
    again = read_instance(text)
    assert again.profiles[0, 0] == FORBID
    assert again.profiles[1, 1] == REQUIRE


def test_read_instance_rejects_short_profile_section():
    inst = generate_uniform(GeneratorConfig(n_clients=3, m_vehicles=2, seed=1))
    lines = write_instance(inst).splitlines()
    drop = max(i for i, l in enumerate(lines) if l == "PROFILE_SECTION") + 1
    text = "\n".join(lines[:drop] + lines[drop + 1:]) + "\n"
    with pytest.raises(ParseError, match="PROFILE_SECTION row count"):
        read_instance(text)


def test_read_instance_rejects_bad_tokens():
    inst = generate_uniform(GeneratorConfig(n_clients=2, m_vehicles=1, seed=1))
    text = write_instance(inst).replace("DIMENSION : 3", "DIMENSION : x")
    with pytest.raises(ParseError):
        read_instance(text)
    with pytest.raises(ParseError, match="missing EOF"):
        read_instance(write_instance(inst).replace("EOF", ""))


def test_read_instance_accepts_shuffled_sections():
    inst = generate_uniform(GeneratorConfig(n_clients=3, m_vehicles=2, seed=3))
    text = write_instance(inst)
    lines = text.splitlines()
    # move PROFILE_SECTION block before CAPACITY_SECTION
    pstart = lines.index("PROFILE_SECTION")
    pend = lines.index("EOF")
    block = lines[pstart:pend]
    rest = lines[:pstart] + lines[pend:]
    cut = rest.index("CAPACITY_SECTION")
    shuffled = "\n".join(rest[:cut] + block + rest[cut:]) + "\n"
    assert read_instance(shuffled) == inst


def test_parse_cvrplib_toy():
    inst = parse_cvrplib(CVRPLIB_TOY)
    assert inst.n_clients == 2 and inst.n_vehicles == 2
    assert np.all(inst.capacities == 100)
    assert np.all(inst.profiles == 0.0)
    # extent is 40, shared across axes
    assert np.allclose(inst.depot, [0.0, 0.0])
    assert np.allclose(inst.coords, [[1.0, 0.0], [0.0, 0.75]])
    assert inst.meta["coord_scale"] == 40.0
    assert list(inst.demands) == [5, 7]


def test_parse_cvrplib_shuffled_sections_equal():
    lines = CVRPLIB_TOY.splitlines()
    d = lines.index("DEMAND_SECTION")
    n = lines.index("NODE_COORD_SECTION")
    dep = lines.index("DEPOT_SECTION")
    shuffled = "\n".join(lines[:n] + lines[d:dep] + lines[n:d] + lines[dep:]) + "\n"
    assert parse_cvrplib(shuffled) == parse_cvrplib(CVRPLIB_TOY)


def test_parse_cvrplib_vehicles_header_wins():
    text = CVRPLIB_TOY.replace("NAME : toy-k2", "NAME : toy\nVEHICLES : 5")
    assert parse_cvrplib(text).n_vehicles == 5


def test_parse_cvrplib_errors():
    lines = [l for l in CVRPLIB_TOY.splitlines() if l not in
             ("DEMAND_SECTION", "1 0", "2 5", "3 7")]
    with pytest.raises(ParseError, match="DEMAND_SECTION"):
        parse_cvrplib("\n".join(lines))
    with pytest.raises(ParseError, match="VEHICLES|-k"):
        parse_cvrplib(CVRPLIB_TOY.replace("NAME : toy-k2", "NAME : toy"))
    with pytest.raises(ValidationError, match="depot demand"):
        parse_cvrplib(CVRPLIB_TOY.replace("1 0\n2 5", "1 3\n2 5"))
    with pytest.raises(ParseError, match="EDGE_WEIGHT_TYPE"):
        parse_cvrplib(CVRPLIB_TOY.replace("EUC_2D", "EXPLICIT"))


def test_derive_pvrplib_preserves_base_fields():
    base = parse_cvrplib(CVRPLIB_TOY)
    cfg = GeneratorConfig(seed=11, forbid_rate_max=0.2, require_rate_max=0.2)
    inst = derive_pvrplib(base, cfg)
    assert np.array_equal(inst.coords, base.coords)
    assert np.array_equal(inst.demands, base.demands)
    assert np.array_equal(inst.capacities, base.capacities)
    assert inst.n_vehicles == base.n_vehicles
    assert inst.profiles.shape == (2, 2)
    again = derive_pvrplib(base, cfg)
    assert np.array_equal(inst.profiles, again.profiles)


def test_derive_pvrplib_zero_rates_all_finite():
    base = parse_cvrplib(CVRPLIB_TOY)
    inst = derive_pvrplib(base, GeneratorConfig(seed=2, forbid_rate_max=0.0,
                                                require_rate_max=0.0))
    assert np.all(np.isfinite(inst.profiles))


def test_dist_matrix_symmetric_zero_diag():
    inst = generate_uniform(GeneratorConfig(n_clients=6, m_vehicles=2, seed=4))
    d = inst.dist_matrix()
    assert np.allclose(d, d.T)
    assert np.all(np.diag(d) == 0)
    assert d[0, 1] == pytest.approx(
        math.hypot(inst.coords[0, 0] - inst.depot[0], inst.coords[0, 1] - inst.depot[1]))
