/**
 * Rater flow: fetch the blinded session, walk the items, cast one vote per
 * item, land on a completion screen. Votes post with the locally minted
 * anonymous token; a failed POST keeps the choice and offers a retry.
 */
import { ApiClient, RaterSession } from './api';
import { RaterProgress, SessionStore } from './state';

export interface RaterController {
  rerender(): void;
  progress: RaterProgress;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [name, value] of Object.entries(attrs)) node.setAttribute(name, value);
  if (text !== undefined) node.textContent = text;
  return node;
}

export async function mountRater(
  container: HTMLElement,
  client: ApiClient,
  sessionId: string,
  storage: Storage,
): Promise<RaterController | null> {
  container.replaceChildren(el('p', { class: 'status' }, 'Loading session…'));

  let session: RaterSession;
  try {
    session = await client.fetchSession(sessionId);
  } catch (error) {
    const screen = el('div', { class: 'error-screen', 'data-testid': 'error-screen' });
    screen.append(
      el('h1', {}, 'Session unavailable'),
      el('p', {}, `Could not load session "${sessionId}".`),
      el('p', { class: 'detail' }, error instanceof Error ? error.message : String(error)),
    );
    container.replaceChildren(screen);
    return null;
  }

  const store = new SessionStore(sessionId, storage);
  const persisted = store.load();
  const progress = new RaterProgress(
    session.items.map((item) => item.item_id),
    persisted.submitted,
  );
  let mode: 'item' | 'done' = progress.isComplete ? 'done' : 'item';
  let postFailed = false;
  let busy = false;

  async function submitCurrent(): Promise<void> {
    const itemId = progress.currentItemId();
    const choice = progress.selections[itemId];
    if (choice === undefined || busy) return;
    busy = true;
    postFailed = false;

    // optimistic: record the vote and move on; roll back if the server rejects
    const previous = progress.submitted[itemId];
    const previousIndex = progress.current;
    progress.markSubmitted(itemId, choice);
    if (progress.isComplete) {
      mode = 'done';
    } else {
      progress.advance();
    }
    rerender();

    try {
      await client.postVote(sessionId, {
        rater_id: persisted.token,
        item_id: itemId,
        option_key: choice,
      });
      // persist only acknowledged votes so a reload never claims unsent ones
      store.save({ token: persisted.token, submitted: { ...progress.submitted } });
    } catch {
      progress.rollbackSubmitted(itemId, previous);
      progress.goTo(previousIndex);
      mode = 'item';
      postFailed = true; // choice stays selected; retry re-posts it
    } finally {
      busy = false;
      rerender();
    }
  }

  function renderCompletion(): void {
    const screen = el('div', { class: 'completion', 'data-testid': 'completion-screen' });
    screen.append(
      el('h1', {}, 'धन्यवाद — thank you!'),
      el('p', {}, `All ${progress.total} votes are recorded.`),
      el('p', { class: 'detail' }, 'You can revisit any item below to change a vote.'),
    );
    const nav = el('div', { class: 'review-nav' });
    session.items.forEach((item, index) => {
      const button = el('button', { 'data-testid': `review-${item.item_id}` }, `${index + 1}`);
      button.addEventListener('click', () => {
        progress.goTo(index);
        mode = 'item';
        rerender();
      });
      nav.append(button);
    });
    screen.append(nav);
    container.replaceChildren(screen);
  }

  function renderItem(): void {
    const index = progress.current;
    const item = session.items[index];
    if (!item) return;
    const itemId = item.item_id;
    const chosen = progress.selections[itemId];
    const alreadySubmitted = itemId in progress.submitted;

    const root = el('div', { class: 'rater', 'data-testid': 'rater-screen' });
    root.append(
      el(
        'p',
        { class: 'progress', 'data-testid': 'progress' },
        `Item ${index + 1} of ${progress.total}`,
      ),
      el('p', { class: 'criteria-banner', 'data-testid': 'criteria' }, session.criteria),
      el('h2', {}, 'समाचार — article'),
      el('blockquote', { class: 'source', 'data-testid': 'source' }, item.source),
      el('h2', {}, 'शीर्षकहरू — candidate headlines'),
    );

    const list = el('div', { class: 'options', role: 'radiogroup' });
    for (const option of item.options) {
      const id = `opt-${itemId}-${option.key}`;
      const row = el('label', { class: 'option', for: id });
      const radio = el('input', {
        type: 'radio',
        id,
        name: `vote-${itemId}`,
        value: option.key,
        'data-testid': `option-${option.key}`,
      });
      if (chosen === option.key) radio.setAttribute('checked', '');
      radio.addEventListener('change', () => {
        progress.select(itemId, option.key);
        rerender();
      });
      row.append(radio, el('span', { class: 'key' }, option.key), el('span', {}, option.summary));
      list.append(row);
    }
    root.append(list);

    if (postFailed) {
      const notice = el('div', { class: 'retry-notice', 'data-testid': 'retry-notice' });
      notice.append(
        el('p', {}, 'Your vote could not be sent. It is kept locally — retry when back online.'),
      );
      root.append(notice);
    }

    const controls = el('div', { class: 'controls' });
    const submitLabel = postFailed ? 'Retry vote' : alreadySubmitted ? 'Change vote' : 'Submit vote';
    const submit = el('button', { class: 'submit', 'data-testid': 'submit' }, submitLabel);
    if (chosen === undefined || busy) submit.setAttribute('disabled', '');
    submit.addEventListener('click', () => void submitCurrent());
    controls.append(submit);

    if (index > 0) {
      const prev = el('button', { class: 'nav', 'data-testid': 'prev' }, '← previous');
      prev.addEventListener('click', () => {
        progress.goTo(index - 1);
        rerender();
      });
      controls.append(prev);
    }
    if (index < progress.total - 1) {
      const next = el('button', { class: 'nav', 'data-testid': 'next' }, 'next →');
      next.addEventListener('click', () => {
        progress.goTo(index + 1);
        rerender();
      });
      controls.append(next);
    }
    root.append(controls);
    container.replaceChildren(root);
  }

  function rerender(): void {
    if (mode === 'done') {
      renderCompletion();
    } else {
      renderItem();
    }
  }

  rerender();
  return { rerender, progress };
}
