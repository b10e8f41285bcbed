"""
Generating profiled routing instances
=====================================

Builds a few random instances, looks at the profile matrix, and round-trips
one through the text codec.
"""

import numpy as np

from pvrp import GeneratorConfig, generate_uniform, generate_zone_constrained
from pvrp import save_instance, load_instance, FORBID, REQUIRE

# a 12-client, 3-vehicle instance with the default sentinel rates
cfg = GeneratorConfig(n_clients=12, m_vehicles=3, seed=42)
inst = generate_uniform(cfg)
print(inst.name)
print("demands:", inst.demands)
print("capacities:", inst.capacities)

# the profile matrix is (N, M); +inf pins a client to a vehicle, -inf bans one
n_forbid = int(np.isneginf(inst.profiles).sum())
n_require = int(np.isposinf(inst.profiles).sum())
print(f"profiles: {n_forbid} forbid, {n_require} require, "
      f"{inst.profiles.size - n_forbid - n_require} finite")

# zone-constrained generation splits the map into vehicle zones and forbids
# crossing at the given rate
zoned = generate_zone_constrained(GeneratorConfig(n_clients=12, m_vehicles=3,
                                                  seed=42), 0.6)
print(zoned.name, "forbid entries:", int(np.isneginf(zoned.profiles).sum()))

# text codec: write, read back, compare
save_instance("/tmp/demo.pvrp", inst)
again = load_instance("/tmp/demo.pvrp")
print("roundtrip equal:", again == inst)

# sentinel values are plain inf constants, usable directly when building
# instances by hand
print("FORBID:", FORBID, " REQUIRE:", REQUIRE)
