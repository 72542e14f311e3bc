// @vitest-environment jsdom
import { beforeEach, describe, expect, it } from 'vitest';
import { mintRaterToken, RaterProgress, SessionStore } from '../src/state';

describe('mintRaterToken', () => {
  it('produces url-safe tokens of the requested length', () => {
    const token = mintRaterToken();
    expect(token).toMatch(/^[A-Za-z0-9_-]{24}$/);
    expect(mintRaterToken(8)).toHaveLength(8);
  });

  it('produces distinct tokens', () => {
    expect(mintRaterToken()).not.toEqual(mintRaterToken());
  });
});

describe('SessionStore', () => {
  beforeEach(() => window.localStorage.clear());

  it('mints once and restores the same token afterwards', () => {
    const store = new SessionStore('abc', window.localStorage);
    const first = store.load();
    const second = new SessionStore('abc', window.localStorage).load();
    expect(second.token).toEqual(first.token);
  });

  it('keeps sessions separate', () => {
    const a = new SessionStore('a', window.localStorage).load();
    const b = new SessionStore('b', window.localStorage).load();
    expect(a.token).not.toEqual(b.token);
  });

  it('persists submitted votes', () => {
    const store = new SessionStore('s', window.localStorage);
    const state = store.load();
    store.save({ token: state.token, submitted: { 'item-001': 'C' } });
    expect(store.load().submitted).toEqual({ 'item-001': 'C' });
  });
});

describe('RaterProgress', () => {
  const ids = ['i1', 'i2', 'i3'];

  it('starts at the first unanswered item', () => {
    expect(new RaterProgress(ids).current).toBe(0);
    expect(new RaterProgress(ids, { i1: 'A' }).current).toBe(1);
    expect(new RaterProgress(ids, { i1: 'A', i2: 'B', i3: 'C' }).isComplete).toBe(true);
  });

  it('selecting twice keeps only the latest choice', () => {
    const progress = new RaterProgress(ids);
    progress.select('i1', 'B');
    progress.select('i1', 'A');
    expect(progress.selections['i1']).toBe('A');
    expect(progress.pendingVote('i1')).toBe('A');
  });

  it('pending vote clears after the service acknowledges it', () => {
    const progress = new RaterProgress(ids);
    progress.select('i1', 'B');
    progress.markSubmitted('i1', 'B');
    expect(progress.pendingVote('i1')).toBeNull();
    progress.select('i1', 'C'); // changing the vote re-opens a pending state
    expect(progress.pendingVote('i1')).toBe('C');
  });

  it('advance moves to the next unanswered item, wrapping backwards', () => {
    const progress = new RaterProgress(ids, { i2: 'A' });
    expect(progress.current).toBe(0);
    progress.markSubmitted('i1', 'A');
    progress.advance();
    expect(progress.currentItemId()).toBe('i3');
    progress.markSubmitted('i3', 'B');
    expect(progress.isComplete).toBe(true);
  });

  it('completed count tracks distinct items', () => {
    const progress = new RaterProgress(ids);
    progress.markSubmitted('i1', 'A');
    progress.markSubmitted('i1', 'B');
    expect(progress.completedCount).toBe(1);
  });
});
