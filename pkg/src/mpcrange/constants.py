"""Physical constants and unit helpers shared across the package."""

SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact

NS = 1e-9
GHZ = 1e9


def db_to_lin(db):
    """Power ratio in dB to linear scale."""
    return 10.0 ** (db / 10.0)


def lin_to_db(lin):
    """Linear power ratio to dB."""
    import numpy as np

    return 10.0 * np.log10(lin)
