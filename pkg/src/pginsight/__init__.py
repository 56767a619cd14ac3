"""Natural-language analytics for PostgreSQL-style schemas.

Pipeline stages: utterance -> intent -> schema bindings -> SQL tree ->
advisor rewrites -> guarded execution with caching -> result analytics ->
question generation and report synthesis. A FastAPI service and a CLI expose
the whole loop.
"""

__version__ = "0.1.0"
