"""Exception types.  Messages carry the failing invariant by name."""


class GhdError(Exception):
    """Base class for all solver and input errors."""


class GridError(GhdError, ValueError):
    pass


class KernelError(GhdError, ValueError):
    pass


class ModelError(GhdError, ValueError):
    pass


class DressingSingular(GhdError):
    def __init__(self, detail: str = ""):
        super().__init__("dressing singular" + (f": {detail}" if detail else ""))


class TbaDivergence(GhdError):
    def __init__(self, detail: str = ""):
        super().__init__("TBA divergence" + (f": {detail}" if detail else ""))


class BoseCondensation(GhdError):
    def __init__(self, detail: str = ""):
        super().__init__("bose condensation regime unsupported" + (f": {detail}" if detail else ""))


class AccelerationSingular(GhdError):
    def __init__(self, detail: str = ""):
        super().__init__("acceleration singular" + (f": {detail}" if detail else ""))


class CharacteristicsError(GhdError):
    """Evolution by characteristics failed (non-convergence, grid too small, ...)."""


class DegenerateCharacteristic(GhdError):
    def __init__(self, detail: str = ""):
        super().__init__("degenerate characteristic" + (f": {detail}" if detail else ""))


class PropagatorError(GhdError):
    pass


class ObservableError(GhdError, ValueError):
    pass


class RayNonConvergence(GhdError):
    def __init__(self, detail: str = ""):
        super().__init__("ray non-convergence" + (f": {detail}" if detail else ""))


class DegenerateRay(GhdError):
    def __init__(self, detail: str = ""):
        super().__init__("degenerate ray" + (f": {detail}" if detail else ""))


class EquipartitionUnsolvable(GhdError):
    def __init__(self, detail: str = ""):
        super().__init__("equipartition unsolvable" + (f": {detail}" if detail else ""))


class ConfigError(GhdError, ValueError):
    """Configuration schema violation."""
