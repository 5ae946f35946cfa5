"""隐式反馈推荐的艺人曝光分析与反馈回路模拟"""

__version__ = "0.1.0"
