"""Hypothesis strategies shared across test modules."""
from hypothesis import strategies as st

from igff.analytics import FieldParams


@st.composite
def field_params(draw, max_M=6):
    M = draw(st.integers(1, max_M))
    cuts = draw(st.lists(st.integers(1, 19), min_size=M - 1, max_size=M - 1, unique=True))
    lam = tuple(sorted(c / 20 for c in cuts)) + (1.0,)
    sig = tuple(draw(st.lists(st.floats(0.2, 3.0), min_size=M, max_size=M)))
    return FieldParams(sig, lam)
