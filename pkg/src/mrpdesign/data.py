#: Modes for the majorization constant ψ. See :func:`mrpdesign.moments.psi_bound`.
PSI_MODES = ("spectral", "frobenius")

#: Interpretations of a price CSV. `raw` prices are converted to natural logs.
PRICE_KINDS = ("raw", "log")

#: Coordinates in which the MM loop is run.
SOLVER_SPACES = ("original", "whitened")

#: Ways of completing a GTRS whose root lies on the boundary of the interval.
HARD_CASE_MODES = ("complete", "raise")

#: Hedge matrix construction modes for synthetic spreads.
SPREAD_MODES = ("true_beta", "perturbed")

#: Strategy sets that can be compared in an experiment.
COMPARISON_SETS = ("all", "mrp")

DEFAULT_LAG_ORDER = 3
"""Default lag order `p` of the portmanteau statistic"""

DEFAULT_TOL_OBJ = 1e-9
"""Relative objective decrease below which the MM loop stops"""

DEFAULT_TOL_W = 1e-8
"""Relative iterate change below which the MM loop stops"""

DEFAULT_MAX_ITER = 1000
"""Cap on MM iterations per start"""

DEFAULT_GTRS_TOL = 1e-10
"""Tolerance on the secular function, relative to max(1, nu) for a single GTRS and
to nu inside the MM loop"""

DEFAULT_N_STARTS = 8
"""Number of feasible starting points tried by the MM solver"""

GTRS_MAX_BISECTIONS = 1_000_000
"""Iteration cap of the bisection on the secular function"""

GTRS_MAX_DOUBLINGS = 200
"""Cap on upper-bracket doublings before a numerical failure is reported"""

DEGENERACY_RATIO = 1e-12
"""M0 is degenerate when min-eig <= DEGENERACY_RATIO * max-eig"""

THRESHOLD_FACTOR = 0.75
"""Trading threshold as a multiple of the in-sample standard deviation"""

#: Defaults of the synthetic cointegrated system: M assets, rank r, length T.
DEFAULT_ASSETS = 6
DEFAULT_RANK = 5
DEFAULT_LENGTH = 528
DEFAULT_SEED = 42
DEFAULT_SPREAD_NOISE_SD = 0.01
DEFAULT_RW_NOISE_SD = 0.01

#: Rolling window defaults: 12 months of 22 trading days in, 6 months out.
DEFAULT_T_IN = 264
DEFAULT_T_OUT = 132
DEFAULT_WINDOWS = 2

DEFAULT_NU_SCALE = 2.0
"""When no variance level is given, nu = DEFAULT_NU_SCALE * nu_min per window"""

RNG_NAME = "numpy.random.PCG64"
"""Bit generator used for every synthetic stream"""

#: Process exit codes. These are a stable contract of the command line.
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NONCONVERGENCE = 3
EXIT_INFEASIBLE = 4
EXIT_DATA = 5

METADATA_KEY = "mrpdesign"
"""Key under which reproducibility metadata is embedded in parquet schemas"""
