import logging
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel

logger = logging.getLogger(__name__)

XDomain = Literal["percent", "fraction"]

# accuracy (fraction) of the two-class non-IID federation at each data sharing percentage
REFERENCE_SHARING_TABLE = pd.DataFrame(
    {
        "sharing_percent": [0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100],
        "natural_acc": [0.2667, 0.6240, 0.6793, 0.6723, 0.7009, 0.6991, 0.7105, 0.7033, 0.7529, 0.7331, 0.7377],
        "robust_acc": [0.2454, 0.5092, 0.5114, 0.5199, 0.5479, 0.5413, 0.5554, 0.5599, 0.5151, 0.5664, 0.5616],
    }
)

# published (a, b, R^2) of y = a * ln(x) + b for the table above
REFERENCE_FITS: Dict[str, Tuple[float, float, float]] = {
    "robust_acc": (0.0996, 0.3529, 0.6648),
    "natural_acc": (0.1558, 0.414, 0.7316),
}


class RegressionFit(BaseModel):
    a: float
    "Slope on ln(x)"
    b: float
    r_squared: float
    x_domain: XDomain = "percent"
    n_points: int
    excluded_x: List[float] = []
    "x values <= 0 left out of the fit"


def fit_log_regression(points: Sequence[Tuple[float, float]], x_domain: XDomain = "percent") -> RegressionFit:
    """Ordinary least squares of y on ln(x).

    Points with x <= 0 are excluded and listed in `excluded_x`. Needs at least
    two distinct positive x values. R^2 is 1 - SS_res / SS_tot, taken as 1 for
    a perfect fit of constant y.
    """
    pts = sorted((float(x), float(y)) for x, y in points)
    excluded = [x for x, _ in pts if x <= 0]
    kept = [(x, y) for x, y in pts if x > 0]
    if excluded:
        logger.warning("excluding %d point(s) with x <= 0 from the log fit", len(excluded))
    if not kept:
        raise ValueError("log regression needs points with x > 0")
    x = np.log(np.array([p[0] for p in kept]))
    y = np.array([p[1] for p in kept])
    if np.unique(x).size < 2:
        raise ValueError("log regression needs at least two distinct x > 0")

    x_mean, y_mean = x.mean(), y.mean()
    a = float(((x - x_mean) * (y - y_mean)).sum() / ((x - x_mean) ** 2).sum())
    b = float(y_mean - a * x_mean)
    ss_res = float(((y - (a * x + b)) ** 2).sum())
    ss_tot = float(((y - y_mean) ** 2).sum())
    if ss_tot == 0.0:
        r_squared = 1.0 if ss_res == 0.0 else float("-inf")
    else:
        r_squared = 1.0 - ss_res / ss_tot
    return RegressionFit(a=a, b=b, r_squared=r_squared, x_domain=x_domain, n_points=len(kept), excluded_x=excluded)


def fit_sweep(table: pd.DataFrame, column: str, x_domain: XDomain = "percent") -> RegressionFit:
    """Fit `column` of a sweep table against its sharing_percent column, read as percent or as fraction."""
    x = table["sharing_percent"].astype(float)
    if x_domain == "fraction":
        x = x / 100.0
    return fit_log_regression(list(zip(x, table[column].astype(float))), x_domain)


def compare_with_reference(table: Optional[pd.DataFrame] = None) -> List[dict]:
    """Fit every accuracy column under both x conventions next to the published coefficients.

    Agreement is reported, not asserted.
    """
    table = REFERENCE_SHARING_TABLE if table is None else table
    rows = []
    for column, (ref_a, ref_b, ref_r2) in REFERENCE_FITS.items():
        if column not in table:
            continue
        for domain in ("percent", "fraction"):
            fit = fit_sweep(table, column, domain)
            rows.append(
                {
                    "column": column,
                    "x_domain": domain,
                    "a": fit.a,
                    "b": fit.b,
                    "r_squared": fit.r_squared,
                    "reference_a": ref_a,
                    "reference_b": ref_b,
                    "reference_r_squared": ref_r2,
                    "excluded_x": fit.excluded_x,
                }
            )
    return rows
