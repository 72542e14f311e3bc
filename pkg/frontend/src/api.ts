/**
 * Typed client for the evaluation service wire protocol.
 *
 * Rater-facing calls never carry model names; the aggregate endpoint is
 * admin-scoped behind a shared-secret header.
 */

export interface RaterOption {
  key: string;
  summary: string;
}

export interface RaterItem {
  item_id: string;
  source: string;
  options: RaterOption[];
}

export interface RaterSession {
  session_id: string;
  criteria: string;
  items: RaterItem[];
}

export interface Aggregate {
  counts: Record<string, number>;
  percentages: Record<string, number>;
  total: number;
}

export const ADMIN_SECRET_HEADER = 'x-admin-secret';

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number | null,
  ) {
    super(message);
  }
}

async function parseFailure(response: Response): Promise<never> {
  let detail = response.statusText;
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (body.detail) detail = JSON.stringify(body.detail);
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(`${response.status}: ${detail}`, response.status);
}

export class ApiClient {
  constructor(readonly baseUrl: string) {}

  private url(path: string): string {
    return `${this.baseUrl.replace(/\/$/, '')}${path}`;
  }

  async health(): Promise<boolean> {
    try {
      const response = await fetch(this.url('/healthz'));
      return response.ok;
    } catch {
      return false;
    }
  }

  async fetchSession(sessionId: string): Promise<RaterSession> {
    const response = await fetch(this.url(`/sessions/${encodeURIComponent(sessionId)}`));
    if (!response.ok) await parseFailure(response);
    return (await response.json()) as RaterSession;
  }

  async postVote(
    sessionId: string,
    vote: { rater_id: string; item_id: string; option_key: string },
  ): Promise<void> {
    const response = await fetch(this.url(`/sessions/${encodeURIComponent(sessionId)}/votes`), {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(vote),
    });
    if (!response.ok) await parseFailure(response);
  }

  async fetchAggregate(sessionId: string, adminSecret: string): Promise<Aggregate> {
    const response = await fetch(
      this.url(`/sessions/${encodeURIComponent(sessionId)}/aggregate`),
      { headers: { [ADMIN_SECRET_HEADER]: adminSecret } },
    );
    if (!response.ok) await parseFailure(response);
    return (await response.json()) as Aggregate;
  }
}
