"""
Module for custom permissions.

"""

from rest_framework.permissions import BasePermission, SAFE_METHODS


class ReadOnlyOrOraclePermission(BasePermission):
    """
    Custom permission class for an API that never writes.

    GET, HEAD and OPTIONS requests are allowed on every view. POST is allowed
    only on views that set ``computes_only``, which answer from the request
    body and store nothing. PUT, PATCH and DELETE are always refused.

    """

    def has_permission(self, request, view):
        """
        Check if the request method is allowed on the view.

        Parameters:
        -----------
        request: Request object
            The incoming request.
        view: View object
            The view that the request was made to.

        Returns:
        --------
        bool:
            True for safe methods, and for POST when the view computes only,
            else False.
        """
        if request.method in SAFE_METHODS:
            return True
        return request.method == 'POST' and getattr(view, 'computes_only', False)
