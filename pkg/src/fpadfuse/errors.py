"""Exception hierarchy shared by all fpadfuse modules.

Each error family maps to a distinct CLI exit code (see cli.EXIT_CODES).
"""


class FpadError(Exception):
    """Base class for all fpadfuse errors."""


# --- image / block processing ---

class NoForeground(FpadError):
    """No block passed the ROI variance threshold."""


class ImageTooSmall(FpadError):
    pass


class FlatBlock(FpadError):
    """Block gradient energy too low for orientation estimation."""


class BlockTooSmall(FpadError):
    """Inscribed square after rotation is below the minimum block size."""


class WindowOutOfBounds(FpadError):
    pass


# --- quality features ---

class DegenerateSignature(FpadError):
    """Ridge-valley signature has an all-zero spectrum."""


class EmptyProfile(FpadError):
    """No interior ridge/valley runs in the binary block."""


class NoValidBlocks(FpadError):
    """No foreground block produced any usable feature."""


# --- tensor compute / model ---

class ShapeMismatch(FpadError):
    pass


class BatchTooSmall(FpadError):
    """Batch statistics need at least 2 samples in training mode."""


class InvalidConfig(FpadError):
    pass


class ChecksumMismatch(FpadError):
    pass


class ConfigMismatch(FpadError):
    pass


class CorruptFile(FpadError):
    pass


# --- datasets / evaluation ---

class SingleClassDataset(FpadError):
    pass


class NoSpoofSamples(FpadError):
    pass


class NoLiveSamples(FpadError):
    pass


class ParseError(FpadError):
    pass


class MissingFile(FpadError):
    pass


class SingleClassTrainSplit(FpadError):
    pass


class EmptySplit(FpadError):
    pass


class IoError(FpadError):
    pass
