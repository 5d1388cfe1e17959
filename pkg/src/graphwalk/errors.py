"""Exception hierarchy shared by every module.

Each exception carries a short machine-readable ``code`` so the CLI can emit
structured error JSON.
"""


class GraphwalkError(Exception):
    code = "error"

    def to_dict(self):
        return {"error": self.code, "message": str(self)}


class InvalidInputError(GraphwalkError, ValueError):
    code = "invalid-input"


class HierarchyError(GraphwalkError, IndexError):
    code = "out-of-hierarchy"


class StructureError(GraphwalkError):
    code = "invalid-structure"


class SingularSystemError(GraphwalkError):
    code = "singular-system"

    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component

    def to_dict(self):
        d = super().to_dict()
        if self.component is not None:
            d["component"] = [int(i) for i in self.component]
        return d


class ConvergenceError(GraphwalkError):
    code = "convergence-failure"

    def __init__(self, message, best=None, residual=None, iterations=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.iterations = iterations

    def to_dict(self):
        d = super().to_dict()
        if self.residual is not None:
            d["residual"] = [float(r) for r in self.residual]
        return d


class PopulationDetectionError(GraphwalkError):
    code = "population-detection"

    def __init__(self, message, histogram=None, bin_centers=None):
        super().__init__(message)
        self.histogram = histogram
        self.bin_centers = bin_centers

    def to_dict(self):
        d = super().to_dict()
        if self.histogram is not None:
            d["histogram"] = [float(v) for v in self.histogram]
            d["bin_centers"] = [float(v) for v in self.bin_centers]
        return d
