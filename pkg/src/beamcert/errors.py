"""Exception hierarchy.

Every error carries an optional ``context`` dict so the pipeline can attach
band and stage information before re-raising.
"""


class BeamcertError(Exception):
    def __init__(self, message="", **context):
        super().__init__(message)
        self.context = dict(context)

    def with_context(self, **extra):
        self.context.update(extra)
        return self

    def __str__(self):
        base = super().__str__()
        if self.context:
            ctx = ", ".join(f"{k}={v}" for k, v in sorted(self.context.items()))
            return f"{base} [{ctx}]"
        return base


# geometry
class SingularMetric(BeamcertError):
    pass


class SignatureError(BeamcertError):
    pass


class StencilOutOfDomain(BeamcertError):
    pass


# eikonal
class NotUnit(BeamcertError):
    pass


class DeformationNotTimelike(BeamcertError):
    pass


class SectionNotSpacelike(BeamcertError):
    pass


class GeodesicBlowup(BeamcertError):
    pass


# bands
class BandOutsideDomain(BeamcertError):
    pass


# transport
class OdeToleranceFailure(BeamcertError):
    pass


# interference
class EnvelopeZero(BeamcertError):
    pass


class RootOutsideOverlap(BeamcertError):
    pass


class ProbeInconsistent(BeamcertError):
    pass


class CoefficientFloorViolated(BeamcertError):
    pass


class LobeOverlap(BeamcertError):
    pass


# assembly
class OutsideBands(BeamcertError):
    pass


class NearSurfaceIllConditioned(BeamcertError):
    pass


# aads
class VExtractionInconsistent(BeamcertError):
    pass


class OutsideRegion(BeamcertError):
    pass


class NotLorentzian(BeamcertError):
    pass


# orchestration
class ConfigError(BeamcertError):
    pass


class IoFailure(BeamcertError):
    pass
