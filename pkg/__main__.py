"""
Entry point for the TIMER Bench MCP Server when run as a module.

This allows running the server with: python -m <repository directory>
"""

from server import main

if __name__ == "__main__":
    main()
