import numpy as np
import pytest
import torch

from cloudclean.model import ModelConfig

# keep every test single-threaded and reproducible
torch.set_num_threads(1)


def tiny_model_config(output_dim: int = 3, m: int = 16, batchnorm: bool = True,
                      **overrides) -> ModelConfig:
    """Smallest architecture that still exercises every stage."""
    kwargs = dict(
        m=m, output_dim=output_dim,
        point_feature_widths=(6, 6, 10), feature_stn_dim=6, feature_stn_after=2,
        regressor_widths=(8,),
        qstn_widths=(6, 8), qstn_fc_widths=(6,),
        stn_widths=(6, 8), stn_fc_widths=(6,),
        batchnorm=batchnorm,
    )
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


def randomize_net(net, seed: int, scale: float = 0.4):
    """Fill every parameter and batch-norm buffer with random values."""
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for p in net.parameters():
            p.copy_(torch.from_numpy(rng.normal(0, scale, size=tuple(p.shape))))
        for name, buf in net.named_buffers():
            if name.endswith("running_mean"):
                buf.copy_(torch.from_numpy(rng.normal(0, 0.3, size=tuple(buf.shape))))
            elif name.endswith("running_var"):
                buf.copy_(torch.from_numpy(rng.uniform(0.5, 2.0, size=tuple(buf.shape))))
    return net


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
