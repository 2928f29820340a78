"""Exception types raised across the package."""


class CeLabError(Exception):
    """Base class for all package errors."""


class NonFiniteOrbit(CeLabError):
    """An orbit point overflowed before the escape test could fire."""


class WindowBeyondOrbit(CeLabError):
    """A requested index window extends past the computed orbit."""


class DerivativeVanished(CeLabError):
    """The critical orbit hit 0, so Df^n(c) = 0 and ratios are undefined."""


class OrbitHitsCritical(CeLabError):
    """A reference orbit passes exactly through the critical point."""


class OrbitEscaped(CeLabError):
    """An orbit escaped before the index an operation needs."""


class Truncated(CeLabError):
    """The binding inequality still held at the end of the available orbit."""

    def __init__(self, p_so_far: int):
        super().__init__(f"bound period still running after {p_so_far} steps")
        self.p_so_far = p_so_far


class SampleEscaped(CeLabError):
    """A sample parameter of a square escaped before the requested time."""

    def __init__(self, k: int, n_escaped: int, n_samples: int):
        super().__init__(f"{n_escaped}/{n_samples} samples escaped before time {k}")
        self.k = k
        self.n_escaped = n_escaped
        self.n_samples = n_samples


class DepthLimit(CeLabError):
    """Refinement needed a square deeper than the configured limit."""


class StartupFailed(CeLabError):
    """The root square never reached an essential return or the large scale."""


class InvalidConstants(CeLabError):
    """A derived constant violates one of its defining inequalities."""


class LedgerStall(CeLabError):
    """No further free return occurred before the iteration budget ran out."""


class EmptyPool(CeLabError):
    """No orbit segment avoided the critical neighbourhood."""


class PrecisionExhausted(CeLabError):
    """The requested scale is below what the available precision resolves."""
