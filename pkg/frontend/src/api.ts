/** Typed client for the job API. fetch is injectable for tests. */

export interface JobRecord {
  id: string;
  status: "queued" | "running" | "done" | "failed";
  created_at: number;
  progress: { step: number; total: number };
  error: string | null;
  artifacts: { frames?: number; output?: string; metrics?: string };
}

export interface Vocab {
  tokens: string[];
  colors: string[];
  shapes: string[];
}

export interface SubmitResult {
  id?: string;
  errors?: Record<string, string>;
  status: number;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    readonly base: string = "",
    private readonly fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  async vocab(): Promise<Vocab> {
    const resp = await this.fetchFn(`${this.base}/api/vocab`);
    if (!resp.ok) throw new Error(`vocab: HTTP ${resp.status}`);
    return resp.json();
  }

  async submitJob(spec: unknown): Promise<SubmitResult> {
    const resp = await this.fetchFn(`${this.base}/api/jobs`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(spec),
    });
    const body = await resp.json().catch(() => ({}));
    if (resp.status === 202) return { id: body.id, status: 202 };
    return { errors: body.errors ?? { _: `HTTP ${resp.status}` }, status: resp.status };
  }

  async getJob(id: string): Promise<JobRecord | null> {
    const resp = await this.fetchFn(`${this.base}/api/jobs/${id}`);
    if (resp.status === 404) return null;
    if (!resp.ok) throw new Error(`job: HTTP ${resp.status}`);
    return resp.json();
  }

  async listJobs(): Promise<JobRecord[]> {
    const resp = await this.fetchFn(`${this.base}/api/jobs`);
    if (!resp.ok) throw new Error(`jobs: HTTP ${resp.status}`);
    return resp.json();
  }

  async deleteJob(id: string): Promise<number> {
    const resp = await this.fetchFn(`${this.base}/api/jobs/${id}`, { method: "DELETE" });
    return resp.status;
  }

  frameUrl(id: string, k: number): string {
    return `${this.base}/api/jobs/${id}/frames/${k}.png`;
  }
}

export interface PollOptions {
  intervalMs?: number;       // 1 Hz default
  maxBackoffMs?: number;     // network-loss backoff cap
  timeoutMs?: number;
  onUpdate?: (rec: JobRecord) => void;
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

/** Poll a job at 1 Hz until done/failed; back off (doubling) on network loss. */
export async function pollJob(
  client: ApiClient,
  id: string,
  opts: PollOptions = {},
): Promise<JobRecord> {
  const interval = opts.intervalMs ?? 1000;
  const maxBackoff = opts.maxBackoffMs ?? 8000;
  const sleep = opts.sleep ?? defaultSleep;
  const deadline = opts.timeoutMs ? Date.now() + opts.timeoutMs : Infinity;
  let backoff = interval;
  for (;;) {
    if (Date.now() > deadline) throw new Error(`poll timeout for job ${id}`);
    let rec: JobRecord | null = null;
    try {
      rec = await client.getJob(id);
      backoff = interval; // healthy again
    } catch {
      backoff = Math.min(backoff * 2, maxBackoff); // network loss: retry later
      await sleep(backoff);
      continue;
    }
    if (rec === null) throw new Error(`job ${id} vanished`);
    opts.onUpdate?.(rec);
    if (rec.status === "done" || rec.status === "failed") return rec;
    await sleep(interval);
  }
}
