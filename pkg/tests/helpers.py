"""Small synthetic datasets shared by several test modules."""

import numpy as np
import pandas as pd

from effectcurve.data import NodeSpec, apply_policy, fold_split, to_long, validate_wide


def make_long(df, spec, policy, k=1, seed=0):
    ds = apply_policy(validate_wide(df, spec), policy)
    long = to_long(ds, k)
    folds = fold_split(ds.n, 5, seed).rows(long.unit)
    return long, folds


def two_period(n, rng, pz=0.5, c=None, r=None):
    """Two time points, a normal covariate and outcome, binary treatment.

    ``c`` (length n) drops units after time 1 where it is 0; ``r`` (n x 2)
    marks measured outcomes.
    """
    df = pd.DataFrame({"L1": rng.normal(size=n), "L2": rng.normal(size=n),
                       "A1": (rng.random(n) < pz).astype(float),
                       "A2": (rng.random(n) < pz).astype(float)})
    df["Y2"] = rng.normal(size=n)
    df["Y3"] = rng.normal(size=n)
    cfg = {"tau": 2, "treatment": "A{t}", "outcome": "Y{t}", "covariates": {"L": "L{t}"},
           "support": [0, 1], "time_labels": [1, 2, 3]}
    if c is not None:
        df["C1"] = c
        df["C2"] = np.where(c == 1, 1.0, np.nan)
        df.loc[c == 0, ["L2", "A2", "Y2", "Y3"]] = np.nan
        cfg["censoring"] = "C{t}"
    if r is not None:
        df["R1"] = r[:, 0]
        df["R2"] = np.where(df["A2"].notna(), r[:, 1], np.nan)
        df.loc[r[:, 0] == 0, "Y2"] = np.nan
        df.loc[(r[:, 1] == 0) | df["A2"].isna(), "Y3"] = np.nan
        cfg["measurement"] = "R{t}"
    return df, NodeSpec.from_config(cfg)
