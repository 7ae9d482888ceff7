"""Single-spike convolutional spiking networks with STDP learning."""

from .encoding import (
    FilterBank,
    FilterKernel,
    apply_filter_bank,
    default_dog_bank,
    generate_inhibition_kernel,
    intensity_lateral_inhibition,
    intensity_to_latency,
    local_normalization,
    make_dog_kernel,
    make_gabor_kernel,
)
from .estimators import SpikeEncoder, SpikingDigitClassifier
from .layers import (
    ConvLayer,
    PoolSpec,
    Winner,
    conv_forward,
    feature_inhibition,
    fire,
    fire_infinite,
    get_k_winners,
    pad_spikewave,
    pointwise_inhibition,
    pool,
    threshold_cut,
)
from .plasticity import PlasticityContext, StdpRule, anti_stdp_rule, convergence, punish, reward, stdp_step
from .tensor import NO_SPIKE, TimeConfig, latencies_to_spikewave, spikewave_to_latencies, validate
from .textio import tensor_to_text, text_to_tensor

__version__ = "0.1.0"
