"""Synthetic HBT measurement chain: records, synthesizers and the g2 estimator."""
from qubitline.chain.estimator import EstimatorOutput, estimate_g2, filter_record
from qubitline.chain.records import (ChainConfig, VoltageRecord, named_rng, read_calibration,
                                     write_calibration)
from qubitline.chain.synth import (apply_record_jitter, synthesize_atom_output,
                                   synthesize_reference)

__all__ = [
    "ChainConfig", "VoltageRecord", "EstimatorOutput", "apply_record_jitter", "estimate_g2",
    "filter_record", "named_rng", "read_calibration", "synthesize_atom_output",
    "synthesize_reference", "write_calibration",
]
