/** Optimistic mutation: apply the new value immediately, run the server
 * action, and restore the previous value if the action fails. */
export async function optimisticUpdate<T>(
  current: T,
  apply: (value: T) => void,
  next: T,
  action: () => Promise<unknown>,
): Promise<void> {
  const previous = current;
  apply(next);
  try {
    await action();
  } catch (err) {
    apply(previous);
    throw err;
  }
}
