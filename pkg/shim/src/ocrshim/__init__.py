"""ocrshim: serve a text-recognition model behind the crop-in, text-out
wire protocol.

The protocol (newline-delimited JSON over stdio or a local TCP socket):

    server -> client on startup:
        {"capability": {"name", "languages", "max_batch", ...}}
    client -> server:
        {"id": str, "crops": [{"png_base64": str}, ...]}
    server -> client, one reply per request:
        {"id": str, "results": [{"text", "confidence", "error"?}]}

A line the server cannot parse is answered with {"error": ...} (plus the
id when salvageable) and serving continues. Decoding is always greedy, so
identical crop bytes produce identical results.
"""

__version__ = "0.1.0"
