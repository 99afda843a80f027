import numpy as np
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

weights = st.floats(0.1, 2.0, allow_nan=False)


def alpha_vectors(min_size=1, max_size=8):
    return st.integers(min_size, max_size).flatmap(
        lambda n: arrays(np.float64, n, elements=weights))


capacities = st.floats(0.5, 10.0, allow_nan=False)
