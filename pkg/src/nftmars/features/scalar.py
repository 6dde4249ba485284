import numpy as np
import pandas as pd

DAY = 86400.0
USER_COLUMNS = ("avg_price", "holding_days", "tx_count")


def tile_scalar(x, dim=64):
    """Repeat a scalar into a ``dim``-long vector."""
    if not np.isfinite(x):
        raise ValueError(f"tile_scalar: non-finite value {x}")
    return np.full(dim, float(x))


def zscore(values):
    """Standardise columns; constant columns map to zero."""
    v = np.asarray(values, dtype=np.float64)
    mu = v.mean(axis=0)
    sd = v.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (v - mu) / sd


def _with_eth(log_):
    f = log_.frame.copy()
    f["eth"] = log_.eth_price()
    return f


def build_item_scalar_features(log_, items=None):
    """Average ETH price and average days between consecutive sales, per token.

    Returns a frame indexed by token with columns ``price`` and ``holding_days``.
    """
    f = _with_eth(log_)
    g = f.groupby("token_id")
    price = g["eth"].mean()
    ts = g["timestamp"]
    n = g.size()
    # mean of consecutive gaps telescopes to (last - first) / (n - 1)
    span = (ts.max() - ts.min()).astype(np.float64) / DAY
    holding = (span / (n - 1).where(n > 1, 1)).where(n > 1, 0.0)
    out = pd.DataFrame({"price": price, "holding_days": holding})
    if items is not None:
        out = out.reindex(list(items))
    return out


def build_user_features(log_, users=None, end_timestamp=None):
    """Average purchase price, average holding period (days) and transaction count per wallet.

    A purchase is held until the token's next sale, or until ``end_timestamp``
    (default: the last timestamp in the log) if it never resold.
    """
    f = _with_eth(log_)
    end = int(f["timestamp"].max()) if end_timestamp is None else int(end_timestamp)
    nxt = f.groupby("token_id", sort=False)["timestamp"].shift(-1)
    held = (nxt.fillna(end) - f["timestamp"]).astype(np.float64) / DAY
    buys = pd.DataFrame({"user": f["buyer"], "eth": f["eth"], "held": held})
    g = buys.groupby("user")
    tx = pd.concat([f["buyer"], f["seller"]]).value_counts()
    out = pd.DataFrame({"avg_price": g["eth"].mean(), "holding_days": g["held"].mean()})
    out["tx_count"] = tx.reindex(out.index).astype(np.float64)
    if users is not None:
        out = out.reindex(list(users))
    return out[list(USER_COLUMNS)]
