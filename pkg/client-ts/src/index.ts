/**
 * Typed client for the tryagain episode service.
 *
 * Three calls drive an episode end to end: createEpisode, step, close. The
 * server is the single source of truth; a handle carries nothing but the
 * episode id. The four wire error statuses map to distinct error classes so
 * trainers can branch on them:
 *
 *   404 NotFoundError          unknown problem or episode
 *   409 EpisodeFinishedError   stepping a finished episode
 *   410 SessionEvictedError    the session idled out and was dropped
 *   422 InvalidRequestError    malformed body or bad overrides
 *
 * Network-level failures and 5xx responses are retried with exponential
 * backoff; 4xx responses are never retried.
 */

export type VerdictKind = "correct" | "incorrect" | "invalid_format";

export interface Verdict {
  kind: VerdictKind;
  canonical_answer: string | null;
}

export interface TrajectoryReward {
  base: number;
  repetition_penalty: number;
  format_penalty: number;
  total: number;
  effective_answers: number;
  turns: number;
}

export interface EpisodeOverrides {
  t_max?: number;
  action_budget?: number;
  max_response_len?: number;
  prompt_template?: string;
  feedback_template?: string;
  feedback_preset?: string;
  format_reminder?: string;
  feedback_mode?: "unary" | "blank";
  schedule?: "exponential" | "linear" | "constant";
  gamma?: number;
  linear_slope?: number;
  penalty_weight?: number;
  invalid_penalty?: number;
  idle_timeout_s?: number;
}

export interface EpisodeHandle {
  episodeId: string;
}

export interface CreateEpisodeResult {
  handle: EpisodeHandle;
  observation: string;
  turn: number;
  actionsLeft: number;
}

export interface StepResult {
  feedback: string;
  /** Present while the episode is still running. */
  observation?: string;
  done: boolean;
  verdict: Verdict;
  turn: number;
  actionsLeft: number;
  /** Present on the terminal step only. */
  reward?: TrajectoryReward;
}

export interface AttemptRecord {
  turn: number;
  answer_raw: string;
  canonical: string | null;
  feedback: string;
  verdict: Verdict;
}

export interface EpisodeSnapshot {
  episodeId: string;
  problemId: string;
  status: "running" | "solved" | "exhausted_turns" | "exhausted_actions";
  turn: number;
  actionsLeft: number;
  history: AttemptRecord[];
  observation?: string;
}

export class EnvServiceError extends Error {
  constructor(
    message: string,
    public readonly status: number,
  ) {
    super(message);
    this.name = new.target.name;
  }
}

export class NotFoundError extends EnvServiceError {}
export class EpisodeFinishedError extends EnvServiceError {}
export class SessionEvictedError extends EnvServiceError {}
export class InvalidRequestError extends EnvServiceError {}

export interface EnvClientOptions {
  baseUrl: string;
  /** Per-request timeout in milliseconds. Default 30000. */
  timeoutMs?: number;
  /** Extra attempts after a transient failure. Default 2. */
  retries?: number;
  /** Initial backoff delay in milliseconds. Default 250. */
  backoffMs?: number;
}

interface WireError {
  detail?: string;
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

function errorFor(status: number, detail: string): EnvServiceError {
  switch (status) {
    case 404:
      return new NotFoundError(detail, status);
    case 409:
      return new EpisodeFinishedError(detail, status);
    case 410:
      return new SessionEvictedError(detail, status);
    case 422:
      return new InvalidRequestError(detail, status);
    default:
      return new EnvServiceError(detail, status);
  }
}

export class EnvClient {
  private readonly baseUrl: string;
  private readonly timeoutMs: number;
  private readonly retries: number;
  private readonly backoffMs: number;

  constructor(options: EnvClientOptions) {
    this.baseUrl = options.baseUrl.replace(/\/+$/, "");
    this.timeoutMs = options.timeoutMs ?? 30_000;
    this.retries = options.retries ?? 2;
    this.backoffMs = options.backoffMs ?? 250;
  }

  async createEpisode(
    problemId: string,
    overrides?: EpisodeOverrides,
  ): Promise<CreateEpisodeResult> {
    const body: Record<string, unknown> = { problem_id: problemId };
    if (overrides !== undefined) {
      body.overrides = overrides;
    }
    const payload = await this.request("POST", "/v1/episodes", body);
    return {
      handle: { episodeId: payload.episode_id as string },
      observation: payload.observation as string,
      turn: payload.turn as number,
      actionsLeft: payload.actions_left as number,
    };
  }

  async step(handle: EpisodeHandle, responseText: string): Promise<StepResult> {
    const payload = await this.request(
      "POST",
      `/v1/episodes/${handle.episodeId}/step`,
      { response: responseText },
    );
    const result: StepResult = {
      feedback: payload.feedback as string,
      done: payload.done as boolean,
      verdict: payload.verdict as Verdict,
      turn: payload.turn as number,
      actionsLeft: payload.actions_left as number,
    };
    if (payload.observation !== undefined) {
      result.observation = payload.observation as string;
    }
    if (payload.reward !== undefined) {
      result.reward = payload.reward as TrajectoryReward;
    }
    return result;
  }

  async close(handle: EpisodeHandle): Promise<void> {
    await this.request("DELETE", `/v1/episodes/${handle.episodeId}`);
  }

  async snapshot(handle: EpisodeHandle): Promise<EpisodeSnapshot> {
    const payload = await this.request("GET", `/v1/episodes/${handle.episodeId}`);
    const snapshot: EpisodeSnapshot = {
      episodeId: payload.episode_id as string,
      problemId: payload.problem_id as string,
      status: payload.status as EpisodeSnapshot["status"],
      turn: payload.turn as number,
      actionsLeft: payload.actions_left as number,
      history: payload.history as AttemptRecord[],
    };
    if (payload.observation !== undefined) {
      snapshot.observation = payload.observation as string;
    }
    return snapshot;
  }

  async health(): Promise<Record<string, unknown>> {
    return this.request("GET", "/healthz");
  }

  private async request(
    method: string,
    path: string,
    body?: Record<string, unknown>,
  ): Promise<Record<string, unknown>> {
    const url = `${this.baseUrl}${path}`;
    let lastError: unknown;
    for (let attempt = 0; attempt <= this.retries; attempt++) {
      if (attempt > 0) {
        await sleep(this.backoffMs * 2 ** (attempt - 1));
      }
      let response: Response;
      try {
        response = await fetch(url, {
          method,
          headers: body === undefined ? {} : { "Content-Type": "application/json" },
          body: body === undefined ? undefined : JSON.stringify(body),
          signal: AbortSignal.timeout(this.timeoutMs),
        });
      } catch (error) {
        lastError = error; // network failure or timeout: retry
        continue;
      }
      if (response.status >= 500) {
        lastError = new EnvServiceError(await response.text(), response.status);
        continue;
      }
      if (response.status === 204) {
        return {};
      }
      if (!response.ok) {
        let detail = `HTTP ${response.status}`;
        try {
          const wire = (await response.json()) as WireError;
          if (wire.detail !== undefined) {
            detail = typeof wire.detail === "string" ? wire.detail : JSON.stringify(wire.detail);
          }
        } catch {
          // no JSON body; keep the status line
        }
        throw errorFor(response.status, detail);
      }
      return (await response.json()) as Record<string, unknown>;
    }
    throw lastError instanceof Error
      ? lastError
      : new EnvServiceError(String(lastError), 0);
  }
}
