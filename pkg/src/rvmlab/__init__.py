"""Axisymmetric relativistic Vlasov-Maxwell equilibria toolkit."""
__version__ = "0.1.0"
