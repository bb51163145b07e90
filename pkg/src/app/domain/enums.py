try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        def __str__(self) -> str:
            return str.__str__(self)

        __format__ = str.__format__

class Activation(StrEnum):
    RELU = "relu"
    TANH = "tanh"
    LINEAR = "linear"

class LayerKind(StrEnum):
    FC = "fc"
    DECONV = "deconv"
    CONV = "conv"
    ACTIVATION = "activation"

class LatentKind(StrEnum):
    APPEARANCE = "appearance"
    GEOMETRIC = "geometric"

class TrainMode(StrEnum):
    ABP = "abp"
    VAE = "vae"

class OptimizerKind(StrEnum):
    SGD = "sgd"
    ADAM = "adam"

class LrSchedule(StrEnum):
    CONSTANT = "constant"
    STEP = "step"

class PixelScale(StrEnum):
    UNIT = "unit"    # [0, 1]
    BYTE = "byte"    # [0, 255]

class ShapeKind(StrEnum):
    ELLIPSE = "ellipse"
    RECTANGLE = "rectangle"
