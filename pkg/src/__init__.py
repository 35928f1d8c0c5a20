"""gascoll - Espectroscopia de colisões de gás com nanoesfera levitada."""

__version__ = "1.0.0"
