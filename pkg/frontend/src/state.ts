/**
 * Rater-side session state: anonymous token, current selections, and which
 * votes the service has acknowledged. Persisted in localStorage so a reload
 * mid-session restores the token and the prior choices.
 */

const TOKEN_ALPHABET = 'ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789_-';

export function mintRaterToken(length = 24): string {
  const values = new Uint8Array(length);
  crypto.getRandomValues(values);
  let token = '';
  for (const v of values) token += TOKEN_ALPHABET[v % TOKEN_ALPHABET.length];
  return token;
}

interface PersistedState {
  token: string;
  submitted: Record<string, string>;
}

export class SessionStore {
  private readonly key: string;

  constructor(
    sessionId: string,
    private readonly storage: Storage,
  ) {
    this.key = `shirshak-eval/${sessionId}`;
  }

  load(): PersistedState {
    const raw = this.storage.getItem(this.key);
    if (raw) {
      try {
        const parsed = JSON.parse(raw) as PersistedState;
        if (parsed.token) return { token: parsed.token, submitted: parsed.submitted ?? {} };
      } catch {
        // fall through to a fresh token
      }
    }
    const fresh = { token: mintRaterToken(), submitted: {} };
    this.save(fresh);
    return fresh;
  }

  save(state: PersistedState): void {
    this.storage.setItem(this.key, JSON.stringify(state));
  }
}

export class RaterProgress {
  /** option key chosen in the UI, per item (may not be submitted yet) */
  readonly selections: Record<string, string> = {};
  /** option key the service has acknowledged, per item */
  readonly submitted: Record<string, string>;
  current = 0;

  constructor(
    readonly itemIds: string[],
    resteredSubmitted: Record<string, string> = {},
  ) {
    this.submitted = { ...resteredSubmitted };
    for (const [itemId, key] of Object.entries(this.submitted)) {
      if (itemIds.includes(itemId)) this.selections[itemId] = key;
    }
    const firstOpen = itemIds.findIndex((id) => !(id in this.submitted));
    this.current = firstOpen === -1 ? Math.max(0, itemIds.length - 1) : firstOpen;
  }

  get total(): number {
    return this.itemIds.length;
  }

  get completedCount(): number {
    return this.itemIds.filter((id) => id in this.submitted).length;
  }

  get isComplete(): boolean {
    return this.completedCount === this.total;
  }

  currentItemId(): string {
    const id = this.itemIds[this.current];
    if (id === undefined) throw new Error('empty session');
    return id;
  }

  /** Selecting twice before submit keeps only the latest choice. */
  select(itemId: string, optionKey: string): void {
    this.selections[itemId] = optionKey;
  }

  markSubmitted(itemId: string, optionKey: string): void {
    this.submitted[itemId] = optionKey;
  }

  /** Undo an optimistic markSubmitted after the server rejected the vote. */
  rollbackSubmitted(itemId: string, previous: string | undefined): void {
    if (previous === undefined) {
      delete this.submitted[itemId];
    } else {
      this.submitted[itemId] = previous;
    }
  }

  /** The selection still awaiting a successful POST, if any. */
  pendingVote(itemId: string): string | null {
    const chosen = this.selections[itemId];
    if (chosen === undefined) return null;
    return this.submitted[itemId] === chosen ? null : chosen;
  }

  goTo(index: number): void {
    if (index >= 0 && index < this.total) this.current = index;
  }

  advance(): void {
    const next = this.itemIds.findIndex(
      (id, index) => index > this.current && !(id in this.submitted),
    );
    if (next !== -1) {
      this.current = next;
      return;
    }
    const anyOpen = this.itemIds.findIndex((id) => !(id in this.submitted));
    if (anyOpen !== -1) this.current = anyOpen;
  }
}
