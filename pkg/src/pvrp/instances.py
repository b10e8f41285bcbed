"""Problem instances: data model, random generators, and text codecs.

An instance is a depot, N clients (coordinates in the unit square plus an
integer demand), M vehicles (capacity and speed), and an N x M profile matrix
scoring how much client i likes being served by vehicle k. Profile entries are
either a finite preference score or one of two hard-constraint sentinels:

    FORBID  (-inf)  vehicle k must never serve client i
    REQUIRE (+inf)  only vehicle k may serve client i

The sentinels are IEEE infinities, never large finite magic numbers, so they
survive arithmetic-free storage and comparisons exactly.

Two text formats live here:
  * a native TSPLIB-flavoured format (write_instance / read_instance) that
    round-trips every float bit-exactly via 17-significant-digit literals;
  * a reader for classical CVRPLib files (parse_cvrplib), which yields an
    instance with all-zero profiles that derive_pvrplib can then decorate.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParseError, ValidationError

FORBID = float("-inf")
REQUIRE = float("inf")


def is_forbid(entry: float) -> bool:
    return entry == FORBID


def is_require(entry: float) -> bool:
    return entry == REQUIRE


def is_finite_pref(entry: float) -> bool:
    return math.isfinite(entry)


@dataclass(eq=False)
class Instance:
    """Immutable problem instance.

    Arrays are 0-based: ``coords[i]``, ``demands[i]`` and ``profiles[i]``
    describe client node ``i + 1``; node 0 is the depot. Vehicles are indexed
    0..M-1. ``meta`` holds origin info (e.g. rescaling data for converted
    files) and never takes part in equality or serialization.
    """

    name: str
    depot: np.ndarray          # (2,)
    coords: np.ndarray         # (N, 2) client coordinates
    demands: np.ndarray        # (N,) positive ints
    capacities: np.ndarray     # (M,) positive ints
    speeds: np.ndarray         # (M,) positive reals
    profiles: np.ndarray       # (N, M) floats with +-inf sentinels
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.depot = np.asarray(self.depot, dtype=np.float64)
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.demands = np.asarray(self.demands, dtype=np.int64)
        self.capacities = np.asarray(self.capacities, dtype=np.int64)
        self.speeds = np.asarray(self.speeds, dtype=np.float64)
        self.profiles = np.asarray(self.profiles, dtype=np.float64)
        self._validate()
        for a in (self.depot, self.coords, self.demands, self.capacities,
                  self.speeds, self.profiles):
            a.setflags(write=False)
        self._dist = None

    # -- structure ---------------------------------------------------------

    @property
    def n_clients(self) -> int:
        return self.coords.shape[0]

    @property
    def n_vehicles(self) -> int:
        return self.capacities.shape[0]

    def node_coords(self) -> np.ndarray:
        """(N+1, 2) coordinates with the depot as node 0."""
        return np.vstack([self.depot[None, :], self.coords])

    def dist_matrix(self) -> np.ndarray:
        """(N+1, N+1) Euclidean distances, cached after first use."""
        if self._dist is None:
            pts = self.node_coords()
            diff = pts[:, None, :] - pts[None, :, :]
            d = np.sqrt((diff * diff).sum(axis=2))
            d.setflags(write=False)
            self._dist = d
        return self._dist

    def distance(self, i: int, j: int) -> float:
        return float(self.dist_matrix()[i, j])

    def required_vehicle(self) -> np.ndarray:
        """(N,) vehicle index a client is pinned to via REQUIRE, else -1."""
        req = np.full(self.n_clients, -1, dtype=np.int64)
        rows, cols = np.nonzero(np.isposinf(self.profiles))
        req[rows] = cols
        return req

    # -- validation / equality ---------------------------------------------

    def _validate(self):
        n, m = self.coords.shape[0], self.capacities.shape[0]
        if n < 1:
            raise ValidationError("instance needs at least one client")
        if m < 1:
            raise ValidationError("instance needs at least one vehicle")
        if self.depot.shape != (2,):
            raise ValidationError("depot must be a 2D coordinate")
        if self.coords.shape != (n, 2):
            raise ValidationError("client coordinates must be (N, 2)")
        if self.profiles.shape != (n, m):
            raise ValidationError(
                f"profile matrix shape {self.profiles.shape} != ({n}, {m})")
        if self.demands.shape != (n,) or np.any(self.demands < 1):
            raise ValidationError("demands must be positive integers, one per client")
        if np.any(self.capacities < 1):
            raise ValidationError("capacities must be positive integers")
        if np.any(self.speeds <= 0):
            raise ValidationError("speeds must be positive")
        if int(self.demands.max()) > int(self.capacities.max()):
            raise ValidationError(
                "some client demand exceeds every vehicle capacity (unsolvable)")
        pts = self.node_coords()
        if np.any(~np.isfinite(pts)) or pts.min() < -1e-9 or pts.max() > 1 + 1e-9:
            raise ValidationError("coordinates must lie in the unit square")
        if np.any(np.isnan(self.profiles)):
            raise ValidationError("profile entries must not be NaN")
        if np.any(np.isposinf(self.profiles).sum(axis=1) > 1):
            raise ValidationError("a client row may hold at most one REQUIRE entry")
        if np.any(np.isneginf(self.profiles).all(axis=1)):
            raise ValidationError("every client row needs at least one non-FORBID entry")

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (self.name == other.name
                and np.array_equal(self.depot, other.depot)
                and np.array_equal(self.coords, other.coords)
                and np.array_equal(self.demands, other.demands)
                and np.array_equal(self.capacities, other.capacities)
                and np.array_equal(self.speeds, other.speeds)
                and np.array_equal(self.profiles, other.profiles))

    def replace(self, **changes) -> "Instance":
        """Functional update; arrays are copied so the result owns its data."""
        kw = dict(name=self.name, depot=self.depot.copy(), coords=self.coords.copy(),
                  demands=self.demands.copy(), capacities=self.capacities.copy(),
                  speeds=self.speeds.copy(), profiles=self.profiles.copy(),
                  meta=dict(self.meta))
        kw.update(changes)
        return Instance(**kw)


@dataclass(frozen=True)
class GeneratorConfig:
    n_clients: int = 20
    m_vehicles: int = 2
    demand_range: tuple[int, int] = (1, 9)
    capacity: int = 40
    speed: float = 1.0
    p_min: float = 0.0
    p_max: float = 1.0
    forbid_rate_max: float = 0.1
    require_rate_max: float = 0.1
    seed: int = 0

    def validate(self):
        if self.n_clients < 1:
            raise ConfigError("n_clients must be >= 1")
        if self.m_vehicles < 1:
            raise ConfigError("m_vehicles must be >= 1")
        lo, hi = self.demand_range
        if not (1 <= lo <= hi):
            raise ConfigError("demand_range must satisfy 1 <= lo <= hi")
        if self.capacity < 1:
            raise ConfigError("capacity must be >= 1")
        if hi > self.capacity:
            raise ConfigError("demand_range upper bound exceeds capacity")
        if self.speed <= 0:
            raise ConfigError("speed must be positive")
        if self.p_min > self.p_max:
            raise ConfigError("p_min must be <= p_max")
        for fname in ("forbid_rate_max", "require_rate_max"):
            v = getattr(self, fname)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{fname} must lie in [0, 1]")
        if self.forbid_rate_max + self.require_rate_max >= 1.0:
            raise ConfigError("forbid_rate_max + require_rate_max must be < 1")
        if self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")


# -- profile sampling ------------------------------------------------------

def _sample_profile_entries(rng, n, m, q_forbid, q_require, p_min, p_max):
    """Raw sentinel/value draw, before row repair.

    One categorical draw per pair: u < q_forbid -> FORBID,
    u < q_forbid + q_require -> REQUIRE, else a finite uniform score. The
    single draw keeps the marginal sentinel rates exactly (q_forbid, q_require).
    """
    u = rng.random((n, m))
    profiles = rng.uniform(p_min, p_max, size=(n, m))
    profiles[u < q_forbid] = FORBID
    profiles[(u >= q_forbid) & (u < q_forbid + q_require)] = REQUIRE
    return profiles


def _repair_rows(rng, profiles, p_min, p_max):
    """Enforce row invariants in place: <=1 REQUIRE, >=1 non-FORBID per row.

    Extra REQUIREs are demoted to Finite(p_max); an all-FORBID row gets one
    random entry resampled as finite. Rows are visited in index order so the
    repair is deterministic for a given rng state.
    """
    n, m = profiles.shape
    for i in range(n):
        req = np.flatnonzero(np.isposinf(profiles[i]))
        if req.size > 1:
            keep = req[rng.integers(req.size)]
            for j in req:
                if j != keep:
                    profiles[i, j] = p_max
        if np.isneginf(profiles[i]).all():
            j = int(rng.integers(m))
            profiles[i, j] = rng.uniform(p_min, p_max)
    return profiles


def _draw_layout(rng, cfg):
    """Coordinates and demands shared by both generators. Depot drawn first."""
    pts = rng.random((cfg.n_clients + 1, 2))
    lo, hi = cfg.demand_range
    demands = rng.integers(lo, hi + 1, size=cfg.n_clients)
    return pts[0], pts[1:], demands


def generate_uniform(cfg: GeneratorConfig) -> Instance:
    """Random instance with uniform layout and mixed-sentinel profiles.

    Per-instance sentinel rates q_forbid ~ U(0, forbid_rate_max) and
    q_require ~ U(0, require_rate_max) are drawn once, then every
    (client, vehicle) pair independently becomes FORBID / REQUIRE / finite.
    Deterministic given cfg.seed.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    depot, coords, demands = _draw_layout(rng, cfg)
    q_forbid = rng.uniform(0.0, cfg.forbid_rate_max)
    q_require = rng.uniform(0.0, cfg.require_rate_max)
    profiles = _sample_profile_entries(
        rng, cfg.n_clients, cfg.m_vehicles, q_forbid, q_require, cfg.p_min, cfg.p_max)
    _repair_rows(rng, profiles, cfg.p_min, cfg.p_max)
    return Instance(
        name=f"uniform-n{cfg.n_clients}-m{cfg.m_vehicles}-seed{cfg.seed}",
        depot=depot, coords=coords, demands=demands,
        capacities=np.full(cfg.m_vehicles, cfg.capacity, dtype=np.int64),
        speeds=np.full(cfg.m_vehicles, cfg.speed, dtype=np.float64),
        profiles=profiles)


def generate_zone_constrained(cfg: GeneratorConfig, constraint_rate: float) -> Instance:
    """Zone variant: hard constraints come from masked angular sectors.

    The service area is split into S = M sectors around the depot and vehicle
    k's home sector is k mod S. Each client masks floor(constraint_rate * S)
    distinct sectors drawn uniformly; vehicles homed in a masked sector are
    FORBID for that client, everything else is a finite uniform score. No
    REQUIRE entries are produced.
    """
    cfg.validate()
    if not 0.0 <= constraint_rate < 1.0:
        raise ConfigError("constraint_rate must lie in [0, 1)")
    rng = np.random.default_rng(cfg.seed)
    depot, coords, demands = _draw_layout(rng, cfg)
    n, m = cfg.n_clients, cfg.m_vehicles
    sectors = m  # S = M
    home = np.arange(m) % sectors
    n_masked = int(constraint_rate * sectors)
    profiles = rng.uniform(cfg.p_min, cfg.p_max, size=(n, m))
    for i in range(n):
        masked = rng.choice(sectors, size=n_masked, replace=False)
        for k in range(m):
            if home[k] in masked:
                profiles[i, k] = FORBID
    _repair_rows(rng, profiles, cfg.p_min, cfg.p_max)
    rtok = format(constraint_rate, "g")
    return Instance(
        name=f"zone-n{n}-m{m}-r{rtok}-seed{cfg.seed}",
        depot=depot, coords=coords, demands=demands,
        capacities=np.full(m, cfg.capacity, dtype=np.int64),
        speeds=np.full(m, cfg.speed, dtype=np.float64),
        profiles=profiles)


def derive_pvrplib(base: Instance, cfg: GeneratorConfig) -> Instance:
    """Decorate a classical instance (zero profiles) with sampled profiles.

    Layout, demands, capacities, speeds and vehicle count are preserved
    exactly; only the profile matrix is drawn, using cfg's rates, bounds and
    seed through the same procedure as generate_uniform. cfg's size fields
    are ignored in favour of the base instance's.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    q_forbid = rng.uniform(0.0, cfg.forbid_rate_max)
    q_require = rng.uniform(0.0, cfg.require_rate_max)
    profiles = _sample_profile_entries(
        rng, base.n_clients, base.n_vehicles, q_forbid, q_require, cfg.p_min, cfg.p_max)
    _repair_rows(rng, profiles, cfg.p_min, cfg.p_max)
    return Instance(
        name=f"{base.name}-profiled-seed{cfg.seed}",
        depot=base.depot.copy(), coords=base.coords.copy(),
        demands=base.demands.copy(), capacities=base.capacities.copy(),
        speeds=base.speeds.copy(), profiles=profiles, meta=dict(base.meta))


# -- native text format ----------------------------------------------------

_NATIVE_SECTIONS = ("CAPACITY_SECTION", "SPEED_SECTION", "NODE_COORD_SECTION",
                    "DEMAND_SECTION", "PROFILE_SECTION")
_CVRPLIB_SECTIONS = ("NODE_COORD_SECTION", "DEMAND_SECTION", "DEPOT_SECTION")
_HEADER_RE = re.compile(r"^\s*([A-Z][A-Z0-9_]*)\s*:\s*(.*?)\s*$")


def _g17(x: float) -> str:
    """Decimal literal with 17 significant digits: round-trips any f64."""
    return format(float(x), ".17g")


def _profile_token(entry: float) -> str:
    if is_forbid(entry):
        return "-INF"
    if is_require(entry):
        return "+INF"
    return _g17(entry)


def write_instance(inst: Instance) -> str:
    """Serialize to the native line-oriented format. See read_instance."""
    n, m = inst.n_clients, inst.n_vehicles
    out = [
        f"NAME : {inst.name}",
        f"DIMENSION : {n + 1}",
        f"VEHICLES : {m}",
        "CAPACITY_SECTION",
    ]
    out += [f"{k + 1} {int(inst.capacities[k])}" for k in range(m)]
    out.append("SPEED_SECTION")
    out += [f"{k + 1} {_g17(inst.speeds[k])}" for k in range(m)]
    out.append("NODE_COORD_SECTION")
    pts = inst.node_coords()
    out += [f"{i + 1} {_g17(pts[i, 0])} {_g17(pts[i, 1])}" for i in range(n + 1)]
    out.append("DEMAND_SECTION")
    out.append("1 0")
    out += [f"{i + 2} {int(inst.demands[i])}" for i in range(n)]
    out.append("PROFILE_SECTION")
    out += [" ".join(_profile_token(v) for v in row) for row in inst.profiles]
    out.append("EOF")
    return "\n".join(out) + "\n"


def _scan(text: str, sections):
    """Split a TSPLIB-style document into header keys and section blocks.

    Returns (headers, blocks, saw_eof) where headers maps KEY -> (value,
    lineno) and blocks maps SECTION -> list of (lineno, stripped line).
    Section order in the file is insignificant.
    """
    lines = text.splitlines()
    keywords = set(sections) | {"EOF"}
    headers, blocks = {}, {}
    saw_eof = False
    i = 0
    while i < len(lines):
        s = lines[i].strip()
        if not s:
            i += 1
            continue
        if s == "EOF":
            saw_eof = True
            i += 1
            continue
        if s in sections:
            if s in blocks:
                raise ParseError(f"duplicate section {s}", i + 1)
            body = []
            j = i + 1
            while j < len(lines):
                t = lines[j].strip()
                if t in keywords or _HEADER_RE.match(t):
                    break
                if t:
                    body.append((j + 1, t))
                j += 1
            blocks[s] = body
            i = j
            continue
        hm = _HEADER_RE.match(s)
        if hm:
            headers[hm.group(1)] = (hm.group(2), i + 1)
            i += 1
            continue
        raise ParseError(f"unexpected line {s!r}", i + 1)
    return headers, blocks, saw_eof


def _int_tok(tok: str, lineno: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"expected integer, got {tok!r}", lineno) from None


def _float_tok(tok: str, lineno: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"expected number, got {tok!r}", lineno) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite number {tok!r}", lineno)
    return v


def _header_int(headers, key):
    if key not in headers:
        raise ParseError(f"missing {key} header")
    value, lineno = headers[key]
    return _int_tok(value, lineno)


def _indexed_rows(block, count, n_fields, section):
    """Parse 'id v1 v2 ...' lines covering ids 1..count exactly once."""
    rows = {}
    for lineno, line in block:
        toks = line.split()
        if len(toks) != n_fields + 1:
            raise ParseError(f"{section} line needs {n_fields + 1} fields", lineno)
        idx = _int_tok(toks[0], lineno)
        if not 1 <= idx <= count:
            raise ParseError(f"{section} id {idx} out of range 1..{count}", lineno)
        if idx in rows:
            raise ParseError(f"{section} repeats id {idx}", lineno)
        rows[idx] = (lineno, toks[1:])
    if len(rows) != count:
        raise ParseError(f"{section} must list all ids 1..{count} ({len(rows)} found)")
    return [rows[i] for i in range(1, count + 1)]


def read_instance(text: str) -> Instance:
    """Parse the native format produced by write_instance.

    Sections may appear in any order. Reals are reconstructed bit-exactly;
    profile sentinel tokens are "-INF" / "+INF".
    """
    headers, blocks, saw_eof = _scan(text, _NATIVE_SECTIONS)
    if "NAME" not in headers:
        raise ParseError("missing NAME header")
    name = headers["NAME"][0]
    dim = _header_int(headers, "DIMENSION")
    m = _header_int(headers, "VEHICLES")
    n = dim - 1
    if n < 1 or m < 1:
        raise ParseError("DIMENSION must be >= 2 and VEHICLES >= 1")
    for sec in _NATIVE_SECTIONS:
        if sec not in blocks:
            raise ParseError(f"missing {sec} section")
    if not saw_eof:
        raise ParseError("missing EOF terminator")

    caps = [_int_tok(f[0], ln) for ln, f in _indexed_rows(blocks["CAPACITY_SECTION"], m, 1, "CAPACITY_SECTION")]
    speeds = [_float_tok(f[0], ln) for ln, f in _indexed_rows(blocks["SPEED_SECTION"], m, 1, "SPEED_SECTION")]
    coords = [[_float_tok(f[0], ln), _float_tok(f[1], ln)]
              for ln, f in _indexed_rows(blocks["NODE_COORD_SECTION"], dim, 2, "NODE_COORD_SECTION")]
    demands = [_int_tok(f[0], ln) for ln, f in _indexed_rows(blocks["DEMAND_SECTION"], dim, 1, "DEMAND_SECTION")]
    if demands[0] != 0:
        raise ValidationError("depot demand must be 0")

    prof_block = blocks["PROFILE_SECTION"]
    if len(prof_block) != n:
        raise ParseError(f"PROFILE_SECTION row count {len(prof_block)} != {n}")
    profiles = np.empty((n, m), dtype=np.float64)
    for i, (lineno, line) in enumerate(prof_block):
        toks = line.split()
        if len(toks) != m:
            raise ParseError(f"PROFILE_SECTION row needs {m} tokens", lineno)
        for k, tok in enumerate(toks):
            if tok == "-INF":
                profiles[i, k] = FORBID
            elif tok == "+INF":
                profiles[i, k] = REQUIRE
            else:
                profiles[i, k] = _float_tok(tok, lineno)

    coords = np.asarray(coords)
    return Instance(name=name, depot=coords[0], coords=coords[1:],
                    demands=np.asarray(demands[1:]), capacities=np.asarray(caps),
                    speeds=np.asarray(speeds), profiles=profiles)


def save_instance(path, inst: Instance):
    with open(path, "w") as fh:
        fh.write(write_instance(inst))


def load_instance(path) -> Instance:
    with open(path) as fh:
        return read_instance(fh.read())


# -- CVRPLib reader --------------------------------------------------------

_K_SUFFIX_RE = re.compile(r"-k(\d+)\s*$", re.IGNORECASE)


def parse_cvrplib(text: str) -> Instance:
    """Read a classical CVRPLib/TSPLIB file (EUC_2D subset).

    The vehicle count comes from a VEHICLES header or the conventional
    "-kK" suffix of NAME. Coordinates are shifted to the origin and divided
    by the largest axis extent so everything lands in the unit square; the
    shift/scale pair is recorded in meta ("coord_offset", "coord_scale").
    Profiles are all Finite(0), a classical-VRP placeholder.
    """
    headers, blocks, _ = _scan(text, _CVRPLIB_SECTIONS)
    if "NAME" not in headers:
        raise ParseError("missing NAME header")
    name = headers["NAME"][0]
    dim = _header_int(headers, "DIMENSION")
    capacity = _header_int(headers, "CAPACITY")
    if dim < 2:
        raise ParseError("DIMENSION must be >= 2")
    if "EDGE_WEIGHT_TYPE" in headers:
        ewt, lineno = headers["EDGE_WEIGHT_TYPE"]
        if ewt != "EUC_2D":
            raise ParseError(f"unsupported EDGE_WEIGHT_TYPE {ewt!r}", lineno)
    if "VEHICLES" in headers:
        m = _header_int(headers, "VEHICLES")
    else:
        sm = _K_SUFFIX_RE.search(name)
        if not sm:
            raise ParseError("vehicle count not found: need a VEHICLES header "
                             "or a '-kK' NAME suffix")
        m = int(sm.group(1))
    if m < 1:
        raise ParseError("vehicle count must be >= 1")
    for sec in _CVRPLIB_SECTIONS:
        if sec not in blocks:
            raise ParseError(f"missing {sec} section")

    coords = [[_float_tok(f[0], ln), _float_tok(f[1], ln)]
              for ln, f in _indexed_rows(blocks["NODE_COORD_SECTION"], dim, 2, "NODE_COORD_SECTION")]
    demands = [_int_tok(f[0], ln) for ln, f in _indexed_rows(blocks["DEMAND_SECTION"], dim, 1, "DEMAND_SECTION")]

    depot_block = blocks["DEPOT_SECTION"]
    depot_ids = []
    for lineno, line in depot_block:
        for tok in line.split():
            v = _int_tok(tok, lineno)
            if v == -1:
                break
            depot_ids.append(v)
    if len(depot_ids) != 1:
        raise ParseError("DEPOT_SECTION must name exactly one depot")
    depot_id = depot_ids[0]
    if not 1 <= depot_id <= dim:
        raise ParseError(f"depot id {depot_id} out of range")
    if demands[depot_id - 1] != 0:
        raise ValidationError("depot demand must be 0")

    pts = np.asarray(coords, dtype=np.float64)
    lo = pts.min(axis=0)
    extent = float((pts.max(axis=0) - lo).max())
    if extent <= 0:
        extent = 1.0
    scaled = (pts - lo) / extent

    client_ids = [i for i in range(1, dim + 1) if i != depot_id]
    return Instance(
        name=name,
        depot=scaled[depot_id - 1],
        coords=scaled[[i - 1 for i in client_ids]],
        demands=np.asarray([demands[i - 1] for i in client_ids]),
        capacities=np.full(m, capacity, dtype=np.int64),
        speeds=np.ones(m, dtype=np.float64),
        profiles=np.zeros((dim - 1, m), dtype=np.float64),
        meta={"source": "cvrplib", "coord_offset": (float(lo[0]), float(lo[1])),
              "coord_scale": extent})
