"""Visual-cue guided landing simulator.

A closed-loop simulation stack for GPS-denied landing on moving
platforms: a front-facing camera tracks a checkerboard cue mounted
beyond the landing pad, a monocular PnP estimator recovers the relative
position and heading, and a gain-scheduled PID controller with flight
modes flies the vehicle onto the pad.

Module map:

- ``geometry``   frames, rotations, pinhole projection
- ``imaging``    synthetic sensor (geometric observations + rasterizer)
- ``detection``  corner candidates, sub-pixel refinement, grid ordering
- ``estimation`` RANSAC + Levenberg-Marquardt PnP, moving-average filter
- ``guidance``   PID law, gain scheduling, flight-mode machine
- ``world``      quadrotor plant, platform trajectories, world layout
- ``config``     scenario configuration (JSON schema)
- ``episode``    closed-loop episode runner
- ``batch``      Monte-Carlo batches and vision validation sweeps
- ``outputs``    CSV / JSONL / JSON writers
- ``service``    FastAPI wrapper exposing the runners over HTTP
- ``cli``        thin HTTP client command line
"""

__version__ = "0.1.0"
