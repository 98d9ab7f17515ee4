"""
Location-scale Student-t helpers.

All functions broadcast over numpy arrays. ``scale2`` is the squared scale and
``df`` the degrees of freedom.
"""
import numpy as np
from scipy import special


def logpdf(y, loc, scale2, df) -> np.ndarray:
    """Log density of St(y; loc, scale2, df)"""
    y, loc, scale2, df = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (y, loc, scale2, df)))
    z2 = (y - loc) ** 2 / (df * scale2)
    return (
        special.gammaln(0.5 * (df + 1.0))
        - special.gammaln(0.5 * df)
        - 0.5 * np.log(np.pi * df * scale2)
        - 0.5 * (df + 1.0) * np.log1p(z2)
    )


def standard_cdf(t, df) -> np.ndarray:
    return special.stdtr(np.asarray(df, dtype=np.float64), np.asarray(t, dtype=np.float64))


def standard_ppf(p, df) -> np.ndarray:
    """Quantile of the standard Student-t; ``p`` in (0, 1), ``df`` > 0"""
    return special.stdtrit(np.asarray(df, dtype=np.float64), np.asarray(p, dtype=np.float64))


def central_interval(level, loc, scale2, df):
    """Equal-tailed interval holding ``level`` probability mass"""
    q = standard_ppf(0.5 * (1.0 + np.asarray(level, dtype=np.float64)), df)
    half_width = q * np.sqrt(scale2)
    return loc - half_width, loc + half_width


def entropy(scale2, df) -> np.ndarray:
    """Differential entropy in nats; translation invariant, so no location"""
    scale2 = np.asarray(scale2, dtype=np.float64)
    df = np.asarray(df, dtype=np.float64)
    half_df = 0.5 * df
    return (
        0.5 * (df + 1.0) * (special.digamma(half_df + 0.5) - special.digamma(half_df))
        + 0.5 * np.log(df)
        + special.betaln(half_df, 0.5)
        + 0.5 * np.log(scale2)
    )
