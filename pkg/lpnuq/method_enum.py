from enum import Enum


class Method(Enum):
    LPN = "lpn"
    FBP = "fbp"


class InitMode(Enum):
    ZEROS = "zeros"
    FBP = "fbp"


class ResampleMode(Enum):
    FRESH_ACQUISITION = "fresh_acquisition"
    FIXED_POOL_SUBSETS = "fixed_pool_subsets"


class OptimizerType(Enum):
    SGD = "sgd"
    ADAM = "adam"
