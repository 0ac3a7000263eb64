"""Physical constants and package defaults.

Frequencies named ``*_freq`` or ``omega_*`` are angular (rad/s) unless the name ends
in ``_hz``.
"""
import math

from scipy import constants as sc

HBAR = sc.hbar
ELEMENTARY_CHARGE = sc.e
EPSILON_0 = sc.epsilon_0
AMU = sc.physical_constants["atomic mass constant"][0]

YB171_MASS_AMU = 170.936323
YB171_MASS = YB171_MASS_AMU * AMU
YB171_QUBIT_HZ = 12.642812118e9

TWO_PI = 2.0 * math.pi

# Counter-propagating 355 nm Raman beams.
RAMAN_WAVELENGTH = 355e-9
RAMAN_DELTA_K = 2.0 * TWO_PI / RAMAN_WAVELENGTH

# Default trap, not measured values. Radial modes land in the 2 to 2.5 MHz band.
DEFAULT_AXIAL_HZ = 0.75e6
DEFAULT_RADIAL_HZ = (2.4e6, 2.2e6)
DEFAULT_AXIS_PROJECTION = (1.0, 0.5)

# Frequency comb operating point.
COMB_F_REP_HZ = 120.125e6
COMB_TAU_PULSE = 3.9e-12
COMB_DELTA_HZ = 33e12
COMB_OMEGA_PP_HZ = 99.8e12
COMB_HARMONIC_OFFSET = 105
COMB_TOOTH_TRUNCATION = 8192
COMB_DELTA_C_HZ = 2.34e6
COMB_RABI_TARGET_HZ = 122.1e3
COMB_GLOBAL_TO_IA = 2.0
COMB_GLOBAL_INTRA_SUPPRESSION = 1.0 / 49.0
COMB_DENOMINATOR_GUARD = TWO_PI * 10e9
COMB_RESONANCE_GUARD = TWO_PI * 100.0
COMB_CONVERGENCE_RTOL = 1e-6

# Pulse shaping.
SIGMA_FRACTION = 0.133
DEFAULT_KNOTS = 65
GATE_DURATION = 250e-6

# AOM saturation (amplitude-scan values).
AOM_A_SAT = 188.5
AOM_XI_HZ = 73.6e3

# Gate planning.
FALLBACK_OFFSET_HZ = 25e3
PARTICIPATION_FLOOR = 1e-3
STABILITY_PREFACTOR = 0.73
STABILITY_EXPONENT = 0.86

# Fock oracle.
DEFAULT_N_MAX = 20
LEAKAGE_TOLERANCE = 1e-8

QUBIT_STATES = ("00", "01", "10", "11")
