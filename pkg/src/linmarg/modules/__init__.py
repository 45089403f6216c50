from . import gaussian_core, refactor, sequential, models, sampling, instances
