"""Small model builders: a VGG-style stack and a small residual net."""
import numpy as np

from .errors import ConfigError
from .graph import LayerSpec, kaiming_init

VGG_WIDTHS = (32, 32, 64, 64, 128, 128)
RESNET_WIDTHS = (8, 16, 32, 64)


def _conv_bn_relu(layers, idx, cin, cout, relu=True):
    layers.append(LayerSpec("conv2d", f"conv{idx}", cin, cout, kernel=3, stride=1, padding=1))
    layers.append(LayerSpec("batchnorm2d", f"bn{idx}", cout, cout))
    if relu:
        layers.append(LayerSpec("relu", f"relu{idx}"))


def tiny_vgg_layers(input_shape, num_classes=10, widths=VGG_WIDTHS):
    """3x3 conv + batchnorm + relu, with a 2x2 max-pool after each pair, then
    a single linear classifier."""
    c, h, w = input_shape
    layers = []
    cin = c
    for i, cout in enumerate(widths):
        _conv_bn_relu(layers, i + 1, cin, cout)
        cin = cout
        if i % 2 == 1 and h >= 2 and w >= 2:
            layers.append(LayerSpec("maxpool2d", f"pool{i // 2 + 1}", kernel=2, stride=2))
            h, w = h // 2, w // 2
    layers.append(LayerSpec("flatten", "flatten"))
    layers.append(LayerSpec("linear", "fc", cin * h * w, num_classes))
    return layers


def tiny_resnet_layers(input_shape, num_classes=10, widths=RESNET_WIDTHS):
    """Four residual blocks. Each block opens with a channel-changing conv,
    then two convs whose output is added back onto the opening activation."""
    c, h, w = input_shape
    layers = []
    cin = c
    idx = 0
    for b, cout in enumerate(widths):
        idx += 1
        _conv_bn_relu(layers, idx, cin, cout)
        skip = len(layers) - 1
        idx += 1
        _conv_bn_relu(layers, idx, cout, cout)
        idx += 1
        _conv_bn_relu(layers, idx, cout, cout, relu=False)
        layers.append(LayerSpec("residual_add", f"add{b + 1}", src=skip))
        layers.append(LayerSpec("relu", f"relu_add{b + 1}"))
        cin = cout
        if b > 0 and h >= 2 and w >= 2:
            layers.append(LayerSpec("maxpool2d", f"pool{b}", kernel=2, stride=2))
            h, w = h // 2, w // 2
    layers.append(LayerSpec("flatten", "flatten"))
    layers.append(LayerSpec("linear", "fc", cin * h * w, num_classes))
    return layers


BUILDERS = {"tiny_vgg": tiny_vgg_layers, "tiny_resnet": tiny_resnet_layers}


def build(model, input_shape, num_classes=10, widths=None, seed=0, dtype=np.float32):
    if model not in BUILDERS:
        raise ConfigError(f"unknown model {model!r}; choose from {sorted(BUILDERS)}")
    kw = {} if widths is None else {"widths": tuple(widths)}
    layers = BUILDERS[model](tuple(input_shape), num_classes, **kw)
    return kaiming_init(layers, input_shape, np.random.default_rng(seed), dtype)
