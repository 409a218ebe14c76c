from pathlib import Path

import numpy as np
import pytest

from storagemarket.network import DemandProfile, Network
from storagemarket.scenario import load_scenario
from storagemarket.storage import StorageUnit
from storagemarket.twoperiod import TwoPeriodModel

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"

# closed-form constants of the bundled two-period instance, derived by hand:
# unit price slope, demand (0, 5), round-trip efficiency 0.95, quadratic
# degradation cost 1/2 sum d_t^2.  With charge x the discharge is 0.95x, the
# scalar cost is 0.95125 x^2, market revenue 4.75x - 1.9025x^2, and the
# spread-parametrized best response x = -dtau / 1.9025.
K2 = 1.9025                                  # twice the scalar cost coefficient
X_SE = 4.75 / 7.61                           # leader-optimal charge: argmax 4.75x - 3.805x^2
DTAU_SE = -1.1875                            # -K2 * X_SE, exact
PI_A_SE = 4.75 ** 2 / 15.22                  # 1.4824244415243102
PI_S_SE = 0.95125 * X_SE ** 2                # 0.37060611038107755
X_STAR = 4.75 / 5.7075                       # argmax of 4.75x - 2.85375x^2
PI_STAR = 4.75 ** 2 / (4 * 2.85375)          # 1.9765659220324134
REV_STAR = 4.75 * X_STAR - K2 * X_STAR ** 2  # 2.635421229376551
COST_STAR = 0.95125 * X_STAR ** 2            # 0.6588553073441378
COOP_LO = (PI_A_SE - REV_STAR) / X_STAR      # aggregator endpoint, -1.3854166...
COOP_HI = -1.237748846393499                 # unit endpoint, root of the margin quadratic
PI_S_BARGAIN = (PI_STAR + PI_S_SE - PI_A_SE) / 2   # 0.4323737954445904
PI_A_BARGAIN = PI_STAR - PI_S_BARGAIN              # 1.5441921265878231
DTAU_BARGAIN = -(PI_S_BARGAIN + COST_STAR) / X_STAR  # -1.3111979166666667
LEVERAGE = PI_A_SE - PI_S_SE                 # 1.1118183311432326
S_ZERO = 12.5
S_SOCIAL = 9.6525
S_STAR = 12.5 - 4.75 * X_STAR + K2 * X_STAR ** 2   # 9.86457877062345
LOAD_PAY_SOCIAL = 5 * (5 - 0.95)             # 20.25
LOAD_PAY_STAR = 5 * (5 - 0.95 * X_STAR)      # 21.046868155935172


@pytest.fixture(scope="session")
def example1():
    return load_scenario(SCENARIO_DIR / "example1.json")


@pytest.fixture(scope="session")
def twobus():
    return load_scenario(SCENARIO_DIR / "twobus.json")


@pytest.fixture(scope="session")
def threeperiod():
    return load_scenario(SCENARIO_DIR / "threeperiod.json")


@pytest.fixture(scope="session")
def example1_model(example1):
    return TwoPeriodModel(example1.network, example1.demand, example1.units[0])


@pytest.fixture(scope="session")
def all_scenarios(example1, twobus, threeperiod):
    return {"example1": example1, "twobus": twobus, "threeperiod": threeperiod}


def single_bus_network(slope=1.0, intercept=0.0, periods=2):
    return Network(gen_cost_intercept=[[intercept] * periods],
                   gen_cost_slope=[[slope] * periods],
                   shift_factors=np.zeros((0, 1)), line_limits=[])


def make_unit(uid="su", bus=0, eta_minus=0.95, eta_plus=1.0, d_max=1.0,
              soc_max=1.0, soc_init=0.0, w=1.0):
    return StorageUnit(id=uid, bus=bus, eta_plus=eta_plus, eta_minus=eta_minus,
                       d_plus_max=d_max, d_minus_max=d_max,
                       soc_min=0.0, soc_max=soc_max, soc_init=soc_init,
                       w_plus=w, w_minus=w)
