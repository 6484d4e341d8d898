# ragsched/__init__.py
# Scheduler library and discrete-event simulator for offloading-based RAG serving.
__version__ = "0.3.0"
