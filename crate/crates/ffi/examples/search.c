/* Loads an index, runs one exact in-process search and prints the ids.
 *
 *   cc examples/search.c -Iinclude -L../../target/release -l:libnearmem_ffi.a -lpthread -ldl -lm -o search
 *   ./search index.civf codebook.cpq
 */
#include <stdio.h>
#include <stdlib.h>

#include "nearmem.h"

int main(int argc, char **argv) {
  if (argc != 3) {
    fprintf(stderr, "usage: %s INDEX CODEBOOK\n", argv[0]);
    return 2;
  }
  NmIndex *index = NULL;
  if (nm_index_load(argv[1], argv[2], &index) != NM_STATUS_OK) {
    fprintf(stderr, "load failed: %s\n", nm_last_error());
    return 3;
  }
  uint32_t dim = nm_index_dim(index);
  float *query = calloc(dim, sizeof(float));
  uint64_t ids[10];
  float dists[10];
  size_t n = 0;
  NmStatus st = nm_index_search_exact(index, query, dim, 4, 10, ids, dists, 10, &n);
  if (st != NM_STATUS_OK) {
    fprintf(stderr, "search failed: %s\n", nm_last_error());
    return 4;
  }
  for (size_t i = 0; i < n; i++) {
    printf("%llu %.6f\n", (unsigned long long)ids[i], dists[i]);
  }
  uint32_t l1 = 0;
  nm_size_l1_queue(100, 16, 0.99, &l1);
  printf("l1 %u\n", l1);
  free(query);
  nm_index_free(index);
  return 0;
}
