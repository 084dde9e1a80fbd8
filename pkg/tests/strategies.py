"""Shared hypothesis strategies."""
from hypothesis import strategies as st

from alpe_lob.lob_ingest import LobEvent

prices = st.floats(min_value=0.01, max_value=5000.0, allow_nan=False, allow_infinity=False)
volumes = st.integers(min_value=1, max_value=100_000).map(float)


@st.composite
def events(draw, seq=0, locked=None):
    bid = draw(prices)
    if locked is True:
        ask = bid
    else:
        lo = 0.001 if locked is False else 0.0
        ask = bid + draw(st.floats(min_value=lo, max_value=5.0))
    return LobEvent(seq, ask, draw(volumes), bid, draw(volumes))
