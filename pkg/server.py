"""
TIMER Bench MCP Server

This MCP server exposes the temporal instruction pipeline as tools:
record chunking, normalized evidence positions and distribution analysis,
automatic metrics, bootstrap summaries, judge scoring and rank
correlation.

All tools are prefixed with 'timer_' to avoid namespace collisions when
used alongside other MCP servers.
"""

from mcp.server.fastmcp import FastMCP
from typing import List, Optional

from timer_bench import tools

# Import API initialization
from timer_bench.api import init_config_from_args

# Create MCP server
mcp = FastMCP("timer-bench-mcp-server")

# Initialize configuration from command-line arguments
init_config_from_args()


# ==============================================================================
# RECORD TOOLS
# ==============================================================================

@mcp.tool()
async def timer_chunk_events(
    events: str,
    fmt: str = "csv",
    token_budget: int = 16000,
    on_oversize: str = "error",
) -> str:
    """Parse clinical events and cut each patient's timeline into XML context chunks.

    Args:
        events (str): Event file contents. CSV needs the header
            patient_id,timestamp,event_type,code,value,text; JSONL has one object per line.
        fmt (str): 'csv' or 'jsonl' (default: csv)
        token_budget (int): Maximum estimated tokens per chunk (default: 16000)
        on_oversize (str): 'error' or 'truncate' for visits that cannot fit a chunk alone

    Returns:
        str: JSON with the chunks (chunk_ref, token_estimate, truncated, xml) and row errors.
    """
    return tools.chunk_events(events, fmt, token_budget, on_oversize)


@mcp.tool()
async def timer_relative_positions(timestamps: List[str], t_min: str, t_max: str) -> str:
    """Map timestamps to normalized positions in [0, 1] of the span [t_min, t_max].

    Args:
        timestamps (List[str]): ISO-8601 timestamps or dates inside the span
        t_min (str): First visit of the record
        t_max (str): Last visit of the record

    Returns:
        str: JSON with one position per timestamp, or an error payload.
    """
    return tools.relative_positions(timestamps, t_min, t_max)


@mcp.tool()
async def timer_analyze_positions(positions: List[List[float]], bins: int = 10) -> str:
    """Analyze where instruction evidence falls along patient timelines.

    Args:
        positions (List[List[float]]): Evidence positions, one list per instruction pair
        bins (int): Histogram bins (default: 10)

    Returns:
        str: JSON with the histogram, last-25%/15%/5% fractions and the
        distribution label (recency, edge or uniform-like).
    """
    return tools.position_report(positions, bins)


# ==============================================================================
# GENERATION AND JUDGING TOOLS
# ==============================================================================

@mcp.tool()
async def timer_generate_pairs(record_xml: str, count: int = 5, mode: str = "tuning", mock: bool = False) -> str:
    """Generate time-grounded instruction-response pairs for one XML patient record.

    Args:
        record_xml (str): A <patient> record as produced by timer_chunk_events
        count (int): Pairs to request (default: 5)
        mode (str): 'tuning', or 'benchmark' to require evidence from several visits
        mock (bool): Use the offline mock provider instead of the configured one

    Returns:
        str: JSON with accepted pairs (with time evidence and positions) and rejected candidates.
    """
    return await tools.generate_for_record(record_xml, count, mode, mock)


@mcp.tool()
async def timer_judge_response(
    instruction: str,
    reference: str,
    response: str,
    mock: bool = False,
    pair_id: Optional[str] = None,
) -> str:
    """Ask the judge model whether a response is correct and complete.

    Args:
        instruction (str): The clinical instruction
        reference (str): Reference answer
        response (str): Response under evaluation
        mock (bool): Use the offline mock judge
        pair_id (str): Optional id carried into the verdict

    Returns:
        str: JSON verdict {pair_id, correct, complete, raw} or an error payload.
    """
    return await tools.judge_response(instruction, reference, response, mock, pair_id)


# ==============================================================================
# METRIC TOOLS
# ==============================================================================

@mcp.tool()
async def timer_score_response(candidate: str, reference: str) -> str:
    """Score a response against a reference with ROUGE-L, chrF, METEOR-lite and GLEU.

    Returns:
        str: JSON with one value per metric in [0, 1].
    """
    return tools.score_response(candidate, reference)


@mcp.tool()
async def timer_bootstrap(
    scores: List[float],
    n_resamples: int = 10000,
    sample_size: int = 100,
    seed: int = 0,
) -> str:
    """Bootstrap the mean of per-sample scores.

    Args:
        scores (List[float]): Per-sample metric values
        n_resamples (int): Number of resamples (default: 10000)
        sample_size (int): Samples drawn per resample (default: 100)
        seed (int): RNG seed

    Returns:
        str: JSON with mean and standard deviation of the resample means.
    """
    return tools.bootstrap_scores(scores, n_resamples, sample_size, seed)


@mcp.tool()
async def timer_spearman(xs: List[float], ys: List[float]) -> str:
    """Spearman rank correlation (average ranks for ties) between two score lists."""
    return tools.spearman_correlation(xs, ys)


@mcp.tool()
async def timer_win_rates(outcomes: List[str]) -> str:
    """Win, loss and tie percentages of head-to-head outcomes ('A', 'B' or 'tie')."""
    return tools.win_rate_summary(outcomes)


@mcp.tool()
async def timer_length_statistics(questions: List[str], answers: List[str]) -> str:
    """Token-length quartiles of instructions and responses."""
    return tools.length_statistics(questions, answers)


def main():
    """Serve the timer_* tools over stdio.

    The tools chunk clinical event streams into XML records, place evidence
    timestamps inside a chunk, generate and judge instruction pairs, and
    compute the scoring and bootstrap statistics.
    """
    import logging

    # stdout carries JSON-RPC, so logs go to stderr
    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    logger = logging.getLogger(__name__)

    try:
        logger.info("Serving timer_* chunking, position, metric and judge tools on stdio")
        mcp.run()
    except Exception as e:
        logger.error(f"❌ MCP server stopped: {e}")
        raise


if __name__ == "__main__":
    main()
