import pytest

from vidpref import config as cfgmod


@pytest.fixture
def tiny_cfg():
    """Heavily scaled-down pipeline config for fast functional tests."""
    cfg = cfgmod.load_config()
    cfg["world"].update(frame_dim=8, identity_dim=2, motion_dim=2, frames=3,
                        reference_count=2, prompt_count=4)
    cfg["repo"].update(n_finetuned=6, n_initial=3)
    cfg["diffusion"].update(hidden_dim=24, pretrain_steps=60, pretrain_corpus=8,
                            init_steps=40, sampler_steps=10, timesteps=20)
    cfg["hpo"].update(steps=30)
    cfg["select"].update(theta_id=0.5, tau_dy=9.0, top_k=10)
    cfg["eval"].update(lengths=[3, 6], checkpoint_every=10, n_samples=4)
    return cfg
