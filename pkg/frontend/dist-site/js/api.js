/** Non-2xx service reply; status 409 means duplicate/stale state. */
export class ApiError extends Error {
    status;
    constructor(status, message) {
        super(message);
        this.status = status;
        this.name = "ApiError";
    }
}
/** Transport-level failure (offline, connection refused). Retryable. */
export class NetworkError extends Error {
    constructor(cause) {
        super(`network failure: ${String(cause)}`);
        this.name = "NetworkError";
    }
}
async function detailOf(resp) {
    try {
        const body = (await resp.json());
        if (typeof body.detail === "string")
            return body.detail;
        if (body.detail !== undefined)
            return JSON.stringify(body.detail);
    }
    catch {
        // non-JSON error body; fall through to status line
    }
    return `HTTP ${resp.status}`;
}
export class AdjudicationApi {
    baseUrl;
    fetchImpl;
    constructor(baseUrl = "", fetchImpl) {
        this.baseUrl = baseUrl;
        this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
    }
    async request(path, init) {
        let resp;
        try {
            resp = await this.fetchImpl(this.baseUrl + path, init);
        }
        catch (err) {
            throw new NetworkError(err);
        }
        if (!resp.ok) {
            throw new ApiError(resp.status, await detailOf(resp));
        }
        return (await resp.json());
    }
    post(path, body) {
        return this.request(path, {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify(body),
        });
    }
    async nextTask(annotator) {
        const out = await this.request(`/tasks/next?annotator=${encodeURIComponent(annotator)}`);
        return out.task;
    }
    async submitLabel(taskId, annotator, label) {
        const out = await this.post(`/tasks/${encodeURIComponent(taskId)}/label`, { annotator, label });
        return out.task;
    }
    async reviewQueue() {
        const out = await this.request("/tasks?status=needs_review");
        return out.tasks;
    }
    async resolveTask(taskId, reviewer, label) {
        const out = await this.post(`/tasks/${encodeURIComponent(taskId)}/resolve`, { reviewer, label });
        return out.task;
    }
}
