"""Network factories shared by the test modules."""

from src.bridge import ann_to_snn, ann_windows_from_activations, init_ann
from src.models import AlphaPolicy


def random_ann(sizes, rng, bias_scale=0.1, zero_row_sum=False):
    """He-initialised ReLU network with small positive hidden biases."""
    ann = init_ann(sizes, rng, zero_row_sum=zero_row_sum)
    for layer in ann[:-1]:
        layer.b = rng.uniform(0.0, bias_scale, size=layer.b.shape)
    ann[-1].b = rng.normal(0.0, bias_scale, size=ann[-1].b.shape)
    return ann


def mapped_network(ann, x, policy=AlphaPolicy.LINEAR, alpha=1.0, zeta=0.5, tau_c=1.0):
    """SNN image of ``ann`` with windows covering its activations on ``x``."""
    windows = ann_windows_from_activations(ann, x, zeta, tau_c)
    return ann_to_snn(ann, policy, windows, tau_c, alpha=alpha)
