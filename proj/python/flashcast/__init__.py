"""Python access to the flashcast C++ core."""

from ._flashcast import (  # noqa: F401
    ConfigError,
    DataError,
    Dataset,
    DimensionError,
    Error,
    EvaluationError,
    Model,
    pearson_r,
    predict_density,
    rmse,
    run_cli,
    total_loss,
    version,
    write_synthetic,
)

__version__ = version()
