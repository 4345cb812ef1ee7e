"""超线性 Dirichlet 问题三解数值求解器"""

__version__ = "2.0.0"
