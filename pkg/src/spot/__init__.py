from .config import RunConfig, preset, load_config
