"""Exception types shared across the package."""

from __future__ import annotations


class NcxError(Exception):
    """Base class for all errors raised by this package."""


class UnboundSymbolError(NcxError):
    """A variable or parameter was referenced but carries no value."""

    def __init__(self, name: str):
        super().__init__(f"unbound symbol: {name!r}")
        self.name = name


class DomainError(NcxError):
    """Evaluation left the domain of a primitive (log/sqrt of non-positive,
    division by zero, overflow)."""

    def __init__(self, message: str, node=None):
        super().__init__(message)
        self.node = node


class NonDifferentiableError(NcxError):
    """The expression is defined but not differentiable at the point."""

    def __init__(self, name: str, message: str = ""):
        super().__init__(message or f"not differentiable with respect to {name!r}")
        self.name = name


class DslSyntaxError(NcxError):
    """Malformed DSL input; carries source position and what was expected."""

    def __init__(self, line: int, col: int, expected: str):
        super().__init__(f"line {line}, col {col}: expected {expected}")
        self.line = line
        self.col = col
        self.expected = expected


class UndeclaredSymbolError(NcxError):
    def __init__(self, name: str, line: int = 0):
        super().__init__(f"undeclared symbol {name!r}" + (f" (line {line})" if line else ""))
        self.name = name


class DuplicateDeclarationError(NcxError):
    def __init__(self, name: str):
        super().__init__(f"duplicate declaration of {name!r}")
        self.name = name


class BoundViolationError(NcxError):
    """Variable bounds are inconsistent with each other or with the kind."""


class SchemaError(NcxError):
    """JSON input does not match the canonical problem schema."""

    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


class NoStrategyError(NcxError):
    """No convexification rule applies to the detected component."""

    def __init__(self, component):
        super().__init__(f"no strategy for component {component}")
        self.component = component


class UnimplementedStrategyError(NcxError):
    """Strategy is named in the catalogue but has no transform."""

    def __init__(self, strategy):
        super().__init__(f"strategy {strategy} is recognized but not implemented")
        self.strategy = strategy


class ShapeMismatchError(NcxError):
    """Constraint does not have the ratio-threshold shape."""


class SignUncertifiableError(NcxError):
    """The sign of a subexpression could not be certified from bounds."""


class ConvexificationFailedError(NcxError):
    """Transforms were applied but the result is still not certified convex."""

    def __init__(self, residual):
        super().__init__(
            f"{len(residual)} component(s) remain non-convex after transformation"
        )
        self.residual = residual


class SolverNumericalError(NcxError):
    """NaN/Inf or a domain failure surfaced inside the solver."""


class SolverInfeasibleError(NcxError):
    """The restoration phase could not produce a strictly feasible point."""


class ZeroDirectionError(NcxError):
    """All violated-constraint gradients vanish; no correction direction exists."""


class UnsupportedBackendError(NcxError):
    def __init__(self, backend: str):
        super().__init__(f"unsupported script backend: {backend!r}")
        self.backend = backend


class UnsupportedAtomError(NcxError):
    def __init__(self, backend: str, kind: str):
        super().__init__(f"backend {backend!r} cannot express {kind!r} atoms")
        self.backend = backend
        self.kind = kind


class GatewayError(NcxError):
    """Network, timeout, or protocol failure talking to the model endpoint."""


class FixtureMissError(GatewayError):
    def __init__(self, key):
        super().__init__(f"no replay fixture for key {key}")
        self.key = key


class ContractViolationError(GatewayError):
    def __init__(self, tag: str, excerpt: str):
        super().__init__(f"reply violates {tag!r} contract: {excerpt[:120]!r}")
        self.tag = tag
        self.excerpt = excerpt


class MissingPlaceholderError(NcxError):
    """Template does not contain exactly one $input$ placeholder."""

    def __init__(self, template_id: str, count: int):
        super().__init__(
            f"template {template_id!r} has {count} $input$ placeholders, expected 1"
        )
        self.template_id = template_id
        self.count = count


class ExtractionFailedError(NcxError):
    """NL extraction did not converge to a consistent problem."""

    def __init__(self, rounds: int, last_report=None, detail: str = ""):
        super().__init__(
            f"extraction failed after {rounds} round(s)" + (f": {detail}" if detail else "")
        )
        self.rounds = rounds
        self.last_report = last_report


class CorpusLoadError(NcxError):
    """One or more corpus files failed to load; carries per-file diagnostics."""

    def __init__(self, failures: list[tuple[str, str]]):
        lines = "; ".join(f"{path}: {msg}" for path, msg in failures)
        super().__init__(f"corpus load failed: {lines}")
        self.failures = failures
