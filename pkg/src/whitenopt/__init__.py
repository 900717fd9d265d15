"""Adam, Shampoo and SOAP on small matrix problems, with exact idealized counterparts."""

from whitenopt.optim import (
    AdamConfig,
    AdamState,
    MatrixOptimizer,
    ShampooConfig,
    ShampooState,
    SoapState,
    adam_step,
    deserialize_state,
    serialize_state,
    shampoo_step,
    soap_step,
)

__version__ = "0.1.0"
