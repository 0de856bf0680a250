/** Job console: submit, poll at 1 Hz, thumbnail strips, edit & resubmit. */

import { ApiClient, JobRecord, pollJob } from "./api.js";

export interface ConsoleView {
  setFieldError(field: string, message: string): void;
  clearFieldErrors(): void;
  renderJob(rec: JobRecord): void;
  renderThumbnails(id: string, urls: string[]): void;
  loadSpecIntoEditor(spec: Record<string, unknown>): void;
}

export class JobConsole {
  readonly watched = new Map<string, JobRecord>();
  readonly watching = new Map<string, Promise<JobRecord>>();
  private readonly specs = new Map<string, Record<string, unknown>>();

  constructor(
    private readonly client: ApiClient,
    private readonly view: ConsoleView,
  ) {}

  /** Submit; 400 field errors land on the offending controls. */
  async submit(spec: Record<string, unknown>, intervalMs = 1000): Promise<string | null> {
    this.view.clearFieldErrors();
    const result = await this.client.submitJob(spec);
    if (result.status !== 202 || !result.id) {
      for (const [field, message] of Object.entries(result.errors ?? {})) {
        this.view.setFieldError(field, message);
      }
      return null;
    }
    this.specs.set(result.id, spec);
    this.watching.set(result.id, this.watch(result.id, intervalMs));
    return result.id;
  }

  async watch(id: string, intervalMs = 1000): Promise<JobRecord> {
    const rec = await pollJob(this.client, id, {
      intervalMs,
      onUpdate: (r) => {
        this.watched.set(id, r);
        this.view.renderJob(r);
      },
    });
    if (rec.status === "done") {
      const n = rec.artifacts.frames ?? 0;
      const urls = Array.from({ length: n }, (_, k) => this.client.frameUrl(id, k));
      this.view.renderThumbnails(id, urls);
    }
    return rec;
  }

  /** Reload a finished job's spec into the editor for tweaking. */
  resubmitSetup(id: string): boolean {
    const spec = this.specs.get(id);
    if (!spec) return false;
    this.view.loadSpecIntoEditor({ ...spec });
    return true;
  }

  async refreshList(): Promise<JobRecord[]> {
    const jobs = await this.client.listJobs();
    for (const rec of jobs) {
      this.watched.set(rec.id, rec);
      this.view.renderJob(rec);
    }
    return jobs;
  }
}
