"""
Test the in-process background job registry.
"""

import asyncio

from app.api.job_status import clear_jobs, create_job, get_job_status, update_job_status


def test_job_lifecycle():
    async def scenario():
        await clear_jobs()
        await create_job("j1")
        pending = await get_job_status("j1")
        await update_job_status("j1", "completed", result={"final_loss": 0.5})
        done = await get_job_status("j1")
        await update_job_status("missing", "failed", error="boom")
        return pending, done, await get_job_status("missing")

    pending, done, missing = asyncio.run(scenario())
    assert pending["status"] == "pending"
    assert pending["kind"] == "train"
    assert done["status"] == "completed"
    assert done["result"] == {"final_loss": 0.5}
    assert missing is None


def test_status_is_a_copy():
    async def scenario():
        await clear_jobs()
        await create_job("j2")
        snapshot = await get_job_status("j2")
        snapshot["status"] = "tampered"
        return await get_job_status("j2")

    assert asyncio.run(scenario())["status"] == "pending"


def test_finished_jobs_are_evicted_oldest_first(monkeypatch):
    monkeypatch.setenv("API_MAX_JOBS", "3")

    async def scenario():
        await clear_jobs()
        await create_job("running")
        await update_job_status("running", "running")
        for name in ("done1", "done2", "done3"):
            await create_job(name)
            await update_job_status(name, "completed")
        await create_job("fresh")
        return {name: await get_job_status(name) for name in ("running", "done1", "done2", "done3", "fresh")}

    jobs = asyncio.run(scenario())
    assert jobs["running"]["status"] == "running"
    assert jobs["done1"] is None and jobs["done2"] is None
    assert jobs["done3"]["status"] == "completed"
    assert jobs["fresh"]["status"] == "pending"
