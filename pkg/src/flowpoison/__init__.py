"""flowpoison: clean-label backdoor poisoning attacks on network traffic
flow classifiers, with stealth evaluation."""

__version__ = "0.1.0"
