"""Multi-view grape yield estimation from cordon images.

Four photographs per cordon feed a multi-task CNN whose autoencoder
channels regularize a yield regression head; a synthetic scene generator
with exact ground-truth weights and a plant-grouped cross-validation
harness make the whole pipeline verifiable at desk scale.
"""

from .dataset import (CordonExample, FoldPlan, ImageId, VIEW_ORDER,
                      load_manifest, make_folds, parse_image_id, split_validation)
from .imageops import (PreprocessConfig, RgbImage, equalize_histogram, load_image,
                       match_histogram, pad_to_uniform, preprocess_example,
                       resize_bilinear, save_image)
from .metrics import (ci95, mae, mean_accuracy, paired_fold_comparison,
                      per_pixel_mse, traditional_estimate)
from .model import (ForwardOutput, ModelConfig, MtlModel, build_model,
                    four_view_inputs, mtl_loss, predict_yield, single_view_inputs,
                    stl_variant)
from .optim import OptimizerState, optimizer_step, zero_grads
from .synth import (Berry, SynthConfig, SyntheticScene, berry_visibility,
                    generate_dataset, generate_scene, render_view, true_weight)
from .tensor import Parameter, Tensor
from .training import (CvReport, DivergenceError, FoldResult, TrainConfig,
                       cross_validate, prepare_examples, train_one)

__version__ = "0.1.0"
