"""Simulator for multiarmed bandits with limited expert advice."""
