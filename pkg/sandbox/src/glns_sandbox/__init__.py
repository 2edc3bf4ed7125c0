"""Line-protocol sandbox for externally generated LNS operator source."""

from .worker import PROTO_VERSION, Session, handle, main

__all__ = ["PROTO_VERSION", "Session", "handle", "main"]
