# Synthetic-gradient laboratory package
from .data import Dataset, generate, grid_2d, load_mnist
from .network import Network, build_network
from .sg_modules import GradientMethod, SGModule, Variant, build_method, build_sg
from .trainer import NetworkSpec, TrainConfig, Trainer, run_experiment

__all__ = ['Dataset', 'generate', 'grid_2d', 'load_mnist', 'Network', 'build_network', 'GradientMethod',
           'SGModule', 'Variant', 'build_method', 'build_sg', 'NetworkSpec', 'TrainConfig', 'Trainer',
           'run_experiment']
