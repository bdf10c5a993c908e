"""Energy-aware multi-objective RL workbench for a twin-rotor pitch rig."""

__version__ = "0.1.0"
