"""Exception hierarchy shared by all modules."""


class HazardError(Exception):
    """Base class for every error raised by this package."""


class InvalidDepthError(HazardError, ValueError):
    pass


class BehindCameraError(HazardError, ValueError):
    pass


class NoIntersectionError(HazardError, ValueError):
    pass


class NoFloorFoundError(HazardError):
    """RANSAC could not find a plausible floor plane; the depth path is skipped."""


class NoDepthError(HazardError, ValueError):
    """A ROI depth estimator had nothing left to average."""


class ConfigError(HazardError, ValueError):
    pass


class MissingFixtureError(HazardError, KeyError):
    pass


class BundleLoadError(HazardError):
    pass


class InvalidSpecError(HazardError, ValueError):
    pass
