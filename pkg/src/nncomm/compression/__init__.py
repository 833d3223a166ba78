from .distillation import distill_train, mixed_loss, teacher_outputs
from .lowrank import LowRankFactors, decompose_conv_lowrank, decompose_model, factorize_kernel
from .pruning import (PruneMask, PruneReport, dense_weights_only, prune_magnitude, retrain,
                      retrain_masked, weights_only)
from .quantization import (QuantizedTensor, dequantize_model, kmeans_quantize, lloyd_1d,
                           pack_indices, quantize_fixed, quantize_kmeans, unpack_indices)

__all__ = [
    "distill_train", "mixed_loss", "teacher_outputs",
    "LowRankFactors", "decompose_conv_lowrank", "decompose_model", "factorize_kernel",
    "PruneMask", "PruneReport", "dense_weights_only", "prune_magnitude", "retrain",
    "retrain_masked", "weights_only",
    "QuantizedTensor", "dequantize_model", "kmeans_quantize", "lloyd_1d", "pack_indices",
    "quantize_fixed", "quantize_kmeans", "unpack_indices",
]
