# Services