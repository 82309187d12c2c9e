"""Exception hierarchy shared across the pipeline.

Every operational failure raised by this package derives from
``PipelineError`` so the CLI can map it to a single machine-readable
error report and exit code.
"""


class PipelineError(Exception):
    """Base class for all recoverable pipeline failures."""

    code = "pipeline_error"

    def report(self) -> dict:
        return {"error": self.code, "message": str(self)}


class InvalidParams(PipelineError):
    """A parameter is outside its documented range.

    ``field`` names the offending entry.
    """

    code = "invalid_params"

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field

    def report(self) -> dict:
        rep = super().report()
        rep["field"] = self.field
        return rep


class DegenerateCloud(PipelineError):
    """Point cloud has too little geometric structure (< 3 non-collinear points)."""

    code = "degenerate_cloud"


class NoCorrespondences(PipelineError):
    """No point pair within the correspondence cap at ICP initialization."""

    code = "no_correspondences"


class EmptyContact(PipelineError):
    """A sampled grasp produced no model points inside the sensor volume."""

    code = "empty_contact"


class CollectError(PipelineError):
    """Data collection aborted (too many failed grasps)."""

    code = "collect_error"


class SchemaMismatch(PipelineError):
    """Manifest file carries an unsupported schema version."""

    code = "schema_mismatch"


class MissingFile(PipelineError):
    """A manifest record references a file that does not exist."""

    code = "missing_file"

    def __init__(self, record_id: str, path: str):
        super().__init__(f"record {record_id}: missing file {path}")
        self.record_id = record_id
        self.path = path


class DimensionMismatch(PipelineError):
    """Two images that must share dimensions do not."""

    code = "dimension_mismatch"


class PoolTooSmall(PipelineError):
    """Baseline scoring pool has fewer usable images than requested."""

    code = "pool_too_small"


class TemplateTooLarge(PipelineError):
    """Template does not fit inside the search image."""

    code = "template_too_large"


class ZeroVariance(PipelineError):
    """Template is constant; normalized correlation is undefined."""

    code = "zero_variance"


class MissingEstimate(PipelineError):
    """Evaluation requested for records without estimate files."""

    code = "missing_estimate"

    def __init__(self, record_ids: list):
        super().__init__(f"missing estimates for {len(record_ids)} records: "
                         + ", ".join(record_ids[:10])
                         + ("..." if len(record_ids) > 10 else ""))
        self.record_ids = list(record_ids)

    def report(self) -> dict:
        rep = super().report()
        rep["record_ids"] = self.record_ids
        return rep
