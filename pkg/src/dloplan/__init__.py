"""Planning and closed-loop tracking of a planar deformable linear object (cable) among convex obstacles."""

__version__ = "0.1.0"
